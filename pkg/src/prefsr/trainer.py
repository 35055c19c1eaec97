"""Pairwise preference training of the toy denoiser.

Per-pair loss::

    inner = (|tw - pol(xw)|^2 - |tw - ref(xw)|^2) - (|tl - pol(xl)|^2 - |tl - ref(xl)|^2)
    loss  = -log sigmoid(-beta * inner)

where ``xw``/``xl`` are the winner/loser noised at a shared ``t`` and
``tw``/``tl`` are the head's regression targets (noise or velocity).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionMismatch, DivergenceDetected, EmptyBatch, NonConvergence
from .hpo import HpoMode, WeightedPairDataset
from .stats import RolloutStats
from .task import ToyTask
from .toy import (
    Architecture,
    Head,
    NetworkParams,
    Schedule,
    forward_inputs,
    forward_noise,
    init_params,
    network_inputs,
    predict_with_grad,
    prediction_target,
)

log = logging.getLogger(__name__)


class PairSampling(str, Enum):
    ALL_PER_EPOCH = "all_per_epoch"
    UNIFORM_PER_ITERATION = "uniform_per_iteration"


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 5.0
    learning_rate: float = 1e-3
    batch_pairs: int = 64
    iterations: int = 500
    hpo_mode: HpoMode = HpoMode.BOTH
    pair_sampling: PairSampling = PairSampling.UNIFORM_PER_ITERATION
    seed: int = 0
    head: Head = Head.VELOCITY
    shared_noise: bool = False
    normalize_weights: bool = True  # False: plain sum of w * loss
    eval_interval: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hpo_mode", HpoMode(self.hpo_mode))
        object.__setattr__(self, "pair_sampling", PairSampling(self.pair_sampling))
        object.__setattr__(self, "head", Head(self.head))
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "DpoConfig":
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = v.value if isinstance(v, Enum) else v
        return out


@dataclass
class TrainRun:
    config: DpoConfig
    loss_log: list[float] = field(default_factory=list)
    reward_stats_log: list[tuple[int, RolloutStats]] = field(default_factory=list)
    final_params: NetworkParams | None = None


@dataclass(frozen=True, eq=False)
class ResolvedPairs:
    """Winner/loser payload vectors for every pair, row-aligned."""

    conds: np.ndarray
    winners: np.ndarray
    losers: np.ndarray
    w_intra: np.ndarray
    w_inter: np.ndarray

    def __len__(self):
        return len(self.winners)

    def weights(self, mode: HpoMode) -> np.ndarray:
        mode = HpoMode(mode)
        ones = np.ones(len(self))
        intra = self.w_intra if mode in (HpoMode.INTRA, HpoMode.BOTH) else ones
        inter = self.w_inter if mode in (HpoMode.INTER, HpoMode.BOTH) else ones
        return intra * inter

    def take(self, idx) -> "ResolvedPairs":
        return ResolvedPairs(self.conds[idx], self.winners[idx], self.losers[idx], self.w_intra[idx], self.w_inter[idx])


def resolve_pairs(
    dataset: WeightedPairDataset,
    samples: Mapping[tuple[str, str], np.ndarray],
    conds: Mapping[str, np.ndarray],
) -> ResolvedPairs:
    """Attach rollout vectors to weighted pairs.

    ``samples[(group_id, candidate_id)]`` is a candidate's generated vector
    and ``conds[group_id]`` the condition that produced it.
    """
    if len(dataset) == 0:
        raise EmptyBatch("no pairs to resolve")
    rows = dataset.pairs
    try:
        return ResolvedPairs(
            np.array([conds[wp.pair.group_id] for wp in rows], dtype=np.float64),
            np.array([samples[wp.pair.group_id, wp.pair.winner_id] for wp in rows], dtype=np.float64),
            np.array([samples[wp.pair.group_id, wp.pair.loser_id] for wp in rows], dtype=np.float64),
            np.array([wp.w_intra for wp in rows]),
            np.array([wp.w_inter for wp in rows]),
        )
    except KeyError as exc:
        raise DimensionMismatch(f"no rollout payload for {exc.args[0]}") from None


def _sigmoid(x):
    # exp of a non-positive argument only, so saturated pairs keep full relative precision
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _pair_losses(policy, reference, x0w, x0l, conds, t, ew, el, beta, schedule, head, coef):
    """Per-pair losses and the flat gradient of ``sum(coef * losses)``."""
    x0w, x0l, ew, el = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x0w, x0l, ew, el))
    if not (x0w.shape == x0l.shape == ew.shape == el.shape):
        raise DimensionMismatch("winner, loser and noise vectors must share a shape")
    b = x0w.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    conds = np.atleast_2d(np.asarray(conds, dtype=np.float64))
    if conds.shape[0] == 1 and b > 1:
        conds = np.broadcast_to(conds, (b, conds.shape[1]))

    targets = np.concatenate(
        [prediction_target(x0w, t, ew, schedule, head), prediction_target(x0l, t, el, schedule, head)]
    )
    inp = np.concatenate(
        [
            network_inputs(policy.arch, forward_noise(x0w, t, ew, schedule), t, conds),
            network_inputs(policy.arch, forward_noise(x0l, t, el, schedule), t, conds),
        ]
    )
    pol, vjp = predict_with_grad(policy, inp)
    ref = forward_inputs(reference, inp)
    resid_pol = targets - pol
    err_pol = np.sum(resid_pol**2, axis=1)
    err_ref = np.sum((targets - ref) ** 2, axis=1)
    inner = (err_pol[:b] - err_ref[:b]) - (err_pol[b:] - err_ref[b:])
    z = beta * inner
    losses = np.logaddexp(0.0, z)

    dinner = np.asarray(coef, dtype=np.float64) * beta * _sigmoid(z)
    sign = np.concatenate([np.ones(b), -np.ones(b)])
    upstream = (-2.0 * np.tile(dinner, 2) * sign)[:, None] * resid_pol
    return losses, vjp(upstream)


def pair_loss(policy, reference, x0_w, x0_l, cond, t, eps_w, eps_l, beta, schedule, head=None):
    """Loss of one preference pair and its gradient w.r.t. the policy only."""
    head = Head(head) if head is not None else policy.arch.head
    if np.ndim(x0_w) != 1:
        raise DimensionMismatch("pair_loss takes single vectors; use hpo_batch_loss for batches")
    losses, grad = _pair_losses(policy, reference, x0_w, x0_l, cond, t, eps_w, eps_l, beta, schedule, head, [1.0])
    return float(losses[0]), grad


def draw_noise(rng: np.random.Generator, b: int, dim: int, shared: bool):
    t = rng.uniform(0.0, 1.0, size=b)
    ew = rng.standard_normal((b, dim))
    el = ew.copy() if shared else rng.standard_normal((b, dim))
    return t, ew, el


def hpo_batch_loss(policy, reference, batch: ResolvedPairs, rng: np.random.Generator, config: DpoConfig, schedule: Schedule):
    """Weighted loss over a batch, drawing fresh (t, eps_w, eps_l) per pair.

    Returns ``(loss, flat gradient, per-pair losses)``.
    """
    if len(batch) == 0:
        raise EmptyBatch("empty batch")
    t, ew, el = draw_noise(rng, len(batch), batch.winners.shape[1], config.shared_noise)
    w = batch.weights(config.hpo_mode)
    coef = w / w.sum() if config.normalize_weights else w
    losses, grad = _pair_losses(
        policy, reference, batch.winners, batch.losers, batch.conds, t, ew, el, config.beta, schedule, config.head, coef
    )
    return float(np.sum(coef * losses)), grad, losses


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        lr = self.lr if lr is None else lr
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- pretraining --------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 4000
    batch: int = 256
    learning_rate: float = 3e-3
    final_lr_fraction: float = 0.05
    seed: int = 0
    threshold: float | None = None
    eval_size: int = 4096


def denoising_mse(params: NetworkParams, x0, conds, t, eps, schedule: Schedule) -> float:
    x_t = forward_noise(x0, t, eps, schedule)
    target = prediction_target(x0, t, eps, schedule, params.arch.head)
    pred = forward_inputs(params, network_inputs(params.arch, x_t, t, conds))
    return float(np.mean(np.sum((target - pred) ** 2, axis=1)))


def heldout_denoising_mse(params: NetworkParams, task: ToyTask, schedule: Schedule, seed: int, size: int = 4096) -> float:
    rng = np.random.default_rng([seed, 99])
    x0, conds = task.training_batch(rng, size)
    t = rng.uniform(0.0, 1.0, size=size)
    eps = rng.standard_normal(x0.shape)
    return denoising_mse(params, x0, conds, t, eps, schedule)


def pretrain_reference(
    task: ToyTask,
    schedule: Schedule,
    config: PretrainConfig = PretrainConfig(),
    arch: Architecture | None = None,
) -> NetworkParams:
    """Fit the denoiser with the standard regression objective."""
    arch = arch or Architecture(head=schedule.default_head)
    params = init_params(arch, seed=config.seed)
    if config.steps == 0:
        return params
    opt = Adam(params.size, config.learning_rate)
    theta = params.flat()
    for step in range(config.steps):
        rng = np.random.default_rng([config.seed, step, 3])
        x0, conds = task.training_batch(rng, config.batch)
        t = rng.uniform(0.0, 1.0, size=config.batch)
        eps = rng.standard_normal(x0.shape)
        x_t = forward_noise(x0, t, eps, schedule)
        target = prediction_target(x0, t, eps, schedule, arch.head)
        pred, vjp = predict_with_grad(params, network_inputs(arch, x_t, t, conds))
        grad = vjp(-2.0 * (target - pred) / config.batch)
        frac = step / max(config.steps - 1, 1)
        lr = config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * frac)
        theta = opt.step(theta, grad, lr)
        params = params.with_flat(theta)
    mse = heldout_denoising_mse(params, task, schedule, config.seed, config.eval_size)
    log.info("pretraining finished: held-out denoising MSE %.5f", mse)
    if config.threshold is not None and not mse < config.threshold:
        raise NonConvergence(f"held-out denoising MSE {mse:.5f} did not reach {config.threshold}")
    return params


# --- preference optimization --------------------------------------------------


def _batch_indices(config: DpoConfig, n_pairs: int):
    """Yield the pair indices of each iteration's batch."""
    if config.pair_sampling == PairSampling.UNIFORM_PER_ITERATION:
        for it in range(config.iterations):
            rng = np.random.default_rng([config.seed, it, 1])
            yield rng.integers(0, n_pairs, size=config.batch_pairs)
        return
    queue: list[int] = []
    epoch = 0
    for _ in range(config.iterations):
        while len(queue) < config.batch_pairs:
            queue.extend(np.random.default_rng([config.seed, epoch, 2]).permutation(n_pairs).tolist())
            epoch += 1
        batch, queue = queue[: config.batch_pairs], queue[config.batch_pairs :]
        yield np.array(batch)


def train(
    pairs: ResolvedPairs,
    reference: NetworkParams,
    config: DpoConfig,
    schedule: Schedule,
    evaluator: Callable[[NetworkParams], RolloutStats] | None = None,
) -> TrainRun:
    """Optimize a copy of ``reference`` on preference pairs.

    The loss is logged every iteration, before that iteration's update.
    ``evaluator`` (if given) runs every ``eval_interval`` iterations and
    once more after the final update.
    """
    if len(pairs) == 0:
        raise EmptyBatch("no training pairs")
    if reference.arch.head != config.head:
        raise ValueError(f"reference head {reference.arch.head.value} != configured head {config.head.value}")
    reference = reference.frozen_copy()
    policy = reference.copy()
    theta = policy.flat()
    opt = Adam(policy.size, config.learning_rate)
    run = TrainRun(config)

    for it, idx in enumerate(_batch_indices(config, len(pairs))):
        if evaluator is not None and config.eval_interval > 0 and it % config.eval_interval == 0:
            run.reward_stats_log.append((it, evaluator(policy)))
        rng = np.random.default_rng([config.seed, it, 0])
        loss, grad, _ = hpo_batch_loss(policy, reference, pairs.take(idx), rng, config, schedule)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            run.final_params = policy
            raise DivergenceDetected(f"non-finite loss at iteration {it}", partial=run)
        run.loss_log.append(loss)
        theta = opt.step(theta, grad)
        policy = policy.with_flat(theta)

    if evaluator is not None:
        run.reward_stats_log.append((config.iterations, evaluator(policy)))
    run.final_params = policy
    return run
