"""In-memory composition of the stages on the synthetic task.

Used by the sweep command and the end-to-end experiment; the CLI's
file-based stages call the same library functions one at a time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .curation import CurationConfig, PairDataset, curate_dataset
from .hpo import WeightedPairDataset, attach_weights
from .scores import ScoreTable, group_candidates
from .stats import RolloutStats, SweepGrid, SweepReport, run_sweep
from .task import (
    SYNTHETIC_METRICS,
    HeldoutEvaluator,
    ToyTask,
    candidate_id,
    generate_rollouts,
    group_id,
    rollouts_score_table,
)
from .toy import Architecture, NetworkParams, Schedule
from .trainer import DpoConfig, PretrainConfig, ResolvedPairs, TrainRun, pretrain_reference, resolve_pairs, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToyConfig:
    schedule: str = "flow"
    steps: int = 20
    cond_noise: float = 0.3
    n_train: int = 100
    n_heldout: int = 20
    m: int = 16
    n: int = 4
    data_seed: int = 0
    heldout_seed: int = 1
    rollout_seed: int = 5
    eval_seed: int = 12345
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    dpo: DpoConfig = field(default_factory=DpoConfig)

    @property
    def schedule_obj(self) -> Schedule:
        return Schedule(self.schedule, self.steps)

    @property
    def task(self) -> ToyTask:
        return ToyTask(self.cond_noise)


@dataclass(frozen=True, eq=False)
class Conditions:
    targets: np.ndarray
    conds: np.ndarray
    prefix: str

    def __len__(self):
        return len(self.conds)

    @property
    def ids(self) -> list[str]:
        return [group_id(self.prefix, g) for g in range(len(self))]

    def cond_map(self) -> dict[str, np.ndarray]:
        return dict(zip(self.ids, self.conds))


def make_conditions(config: ToyConfig) -> tuple[Conditions, Conditions]:
    task = config.task
    train_t, train_c = task.sample_conditions(config.n_train, config.data_seed)
    held_t, held_c = task.sample_conditions(config.n_heldout, config.heldout_seed)
    return Conditions(train_t, train_c, "g"), Conditions(held_t, held_c, "h")


def sample_map(samples: np.ndarray, conditions: Conditions) -> dict[tuple[str, str], np.ndarray]:
    return {
        (gid, candidate_id(i)): samples[g, i]
        for g, gid in enumerate(conditions.ids)
        for i in range(samples.shape[1])
    }


@dataclass
class CuratedData:
    samples: np.ndarray
    table: ScoreTable
    pairs: PairDataset
    weighted: WeightedPairDataset
    resolved: ResolvedPairs


def curate_toy(
    reference: NetworkParams,
    conditions: Conditions,
    m: int,
    n: int,
    config: ToyConfig,
) -> CuratedData:
    """Roll out the reference M times per condition, score, curate and weight."""
    samples = generate_rollouts(reference, conditions.conds, m, config.schedule_obj, config.rollout_seed)
    table = rollouts_score_table(samples, conditions.targets, conditions.prefix)
    pairs = curate_dataset(group_candidates(table), SYNTHETIC_METRICS, CurationConfig(n, m, strict_m=True))
    weighted = attach_weights(pairs, config.dpo.hpo_mode)
    resolved = resolve_pairs(weighted, sample_map(samples, conditions), conditions.cond_map())
    return CuratedData(samples, table, pairs, weighted, resolved)


def heldout_evaluator(heldout: Conditions, m: int, config: ToyConfig) -> HeldoutEvaluator:
    return HeldoutEvaluator(heldout.conds, heldout.targets, m, config.schedule_obj, config.eval_seed)


def pretrain(config: ToyConfig) -> NetworkParams:
    arch = Architecture(head=config.dpo.head)
    return pretrain_reference(config.task, config.schedule_obj, config.pretrain, arch)


@dataclass
class ExperimentResult:
    reference: NetworkParams
    reference_stats: RolloutStats
    policy_stats: RolloutStats
    run: TrainRun
    data: CuratedData


def run_experiment(config: ToyConfig, reference: NetworkParams | None = None) -> ExperimentResult:
    """Pretrain (unless given a reference), curate, train, and evaluate held-out Best/Mean/Worst@M."""
    if reference is None:
        reference = pretrain(config)
    train_c, held_c = make_conditions(config)
    data = curate_toy(reference, train_c, config.m, config.n, config)
    evaluator = heldout_evaluator(held_c, config.m, config)
    run = train(data.resolved, reference, config.dpo, config.schedule_obj, evaluator)
    ref_stats = evaluator(reference)
    return ExperimentResult(reference, ref_stats, run.reward_stats_log[-1][1], run, data)


def sweep(config: ToyConfig, grid: SweepGrid, reference: NetworkParams | None = None) -> SweepReport:
    """One training run per (M, N) cell, sharing reference, conditions and seeds."""
    if reference is None:
        reference = pretrain(config)
    train_c, held_c = make_conditions(config)

    def run_cell(m: int, n: int) -> TrainRun:
        data = curate_toy(reference, train_c, m, n, config)
        return train(data.resolved, reference, config.dpo, config.schedule_obj, heldout_evaluator(held_c, m, config))

    return run_sweep(grid, run_cell)


def config_from_mapping(data: Mapping) -> ToyConfig:
    """Build a ToyConfig from a nested mapping (as read from TOML/JSON)."""
    data = dict(data)
    pre = PretrainConfig(**data.pop("pretrain", {}))
    dpo_raw = dict(data.pop("dpo", {}))
    dpo = DpoConfig.from_mapping(dpo_raw)
    known = set(ToyConfig.__dataclass_fields__) - {"pretrain", "dpo"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown experiment options: {sorted(unknown)}")
    cfg = ToyConfig(pretrain=pre, dpo=dpo, **data)
    if "head" not in dpo_raw:
        cfg = replace(cfg, dpo=replace(dpo, head=cfg.schedule_obj.default_head))
    return cfg
