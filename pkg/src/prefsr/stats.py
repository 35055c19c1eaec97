"""Rollout reward statistics and the M x N/M sweep harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyList, PipelineError, SampleCountMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RolloutStats:
    m: int
    best: float
    mean: float
    worst: float


def rollout_stats(rewards: Sequence[float]) -> RolloutStats:
    r = np.asarray(rewards, dtype=np.float64).ravel()
    if r.size == 0:
        raise EmptyList("rollout statistics need at least one reward")
    return RolloutStats(int(r.size), float(r.max()), float(r.mean()), float(r.min()))


def prefix_stats(rewards: Sequence[float], sizes: Sequence[int]) -> list[RolloutStats]:
    """Statistics over the first M rewards, for each M in ``sizes``."""
    r = np.asarray(rewards, dtype=np.float64)
    return [rollout_stats(r[:m]) for m in sizes]


def average_stats(stats: Sequence[RolloutStats]) -> RolloutStats:
    """Average Best/Mean/Worst@M over inputs (all must share M)."""
    if not stats:
        raise EmptyList("nothing to average")
    ms = {s.m for s in stats}
    if len(ms) != 1:
        raise ValueError(f"cannot average statistics over different M: {sorted(ms)}")
    return RolloutStats(
        stats[0].m,
        float(np.mean([s.best for s in stats])),
        float(np.mean([s.mean for s in stats])),
        float(np.mean([s.worst for s in stats])),
    )


@dataclass(frozen=True)
class MeanStd:
    metric: str
    mean: float
    std: float

    def formatted(self, digits: int = 3) -> str:
        return format_mean_std(self.mean, self.std, digits)


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def mean_std_report(per_input_scores, metrics: Sequence[str], samples: int = 10) -> list[MeanStd]:
    """Stability table from ``samples`` random outputs per input.

    ``per_input_scores`` has shape (inputs, samples, metrics). Sample slot k
    across all inputs forms one evaluation run; each run is averaged over
    inputs and the table reports mean and population std over the runs.
    """
    s = np.asarray(per_input_scores, dtype=np.float64)
    if s.ndim != 3 or s.shape[2] != len(metrics):
        raise ValueError(f"expected (inputs, samples, {len(metrics)}) scores, got {s.shape}")
    if s.shape[1] != samples:
        raise SampleCountMismatch(f"expected {samples} samples per input, got {s.shape[1]}")
    runs = s.mean(axis=0)  # (samples, metrics)
    out = []
    for j, name in enumerate(metrics):
        col = runs[:, j]
        # identical runs: report exactly 0 rather than rounding noise from the mean
        std = 0.0 if np.all(col == col[0]) else float(col.std())
        out.append(MeanStd(name, float(col.mean()), std))
    return out


def format_mean_std_table(rows: Sequence[MeanStd], label: str = "", digits: int = 3) -> str:
    header = " & ".join(["method"] + [r.metric for r in rows])
    body = " & ".join([label] + [r.formatted(digits) for r in rows])
    return header + "\n" + body + "\n"


# --- sweeps ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    m_values: tuple[int, ...]
    ratios: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))
        object.__setattr__(self, "ratios", tuple(Fraction(r) for r in self.ratios))

    def cells(self) -> list[tuple[int, int, Fraction]]:
        """Feasible (M, N, N/M) cells; infeasible combinations are dropped."""
        out = []
        for m in self.m_values:
            for ratio in self.ratios:
                n = ratio * m
                if n.denominator != 1 or n < 1 or 2 * n > m:
                    log.info("skipping infeasible sweep cell M=%d N/M=%s", m, ratio)
                    continue
                out.append((m, int(n), ratio))
        return out


@dataclass
class SweepCell:
    m: int
    n: int
    ratio: Fraction
    run: object | None = None  # a TrainRun, possibly partial
    error: str | None = None

    @property
    def status(self) -> str:
        return "ok" if self.error is None else "failed"


@dataclass
class SweepReport:
    cells: list[SweepCell] = field(default_factory=list)

    def final_means(self) -> dict[tuple[int, int], float | None]:
        out = {}
        for c in self.cells:
            stats = c.run.reward_stats_log if c.run is not None else []
            out[c.m, c.n] = stats[-1][1].mean if stats else None
        return out


def run_sweep(grid: SweepGrid, run_cell: Callable[[int, int], object]) -> SweepReport:
    """Run one training job per feasible cell.

    ``run_cell(M, N)`` returns a TrainRun. A cell that raises a pipeline
    error is recorded with its partial run (if any) and the sweep goes on.
    """
    report = SweepReport()
    for m, n, ratio in grid.cells():
        log.info("sweep cell M=%d N=%d", m, n)
        try:
            report.cells.append(SweepCell(m, n, ratio, run_cell(m, n)))
        except PipelineError as exc:
            log.warning("sweep cell M=%d N=%d failed: %s", m, n, exc)
            report.cells.append(SweepCell(m, n, ratio, getattr(exc, "partial", None), str(exc)))
    return report
