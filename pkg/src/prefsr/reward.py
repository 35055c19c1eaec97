"""Hybrid FR/NR perceptual reward.

Scores are direction-aligned (lower-is-better columns negated), min-max
normalized within each candidate group, averaged within each metric
family, and the two family means are given equal weight.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import SingletonGroup
from .scores import CandidateGroup, Family, MetricSet

# value assigned to every entry of a column whose scores are all equal
CONSTANT_COLUMN_VALUE = 0.5


@dataclass(frozen=True, eq=False)
class NormalizedGroup:
    group_id: str
    candidate_ids: tuple[str, ...]
    normalized: np.ndarray


@dataclass(frozen=True, eq=False)
class RewardVector:
    group_id: str
    candidate_ids: tuple[str, ...]
    rewards: np.ndarray

    def __post_init__(self):
        r = np.array(self.rewards, dtype=np.float64)
        r.setflags(write=False)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))

    def __len__(self):
        return len(self.candidate_ids)


def align_direction(group: CandidateGroup, metrics: MetricSet) -> CandidateGroup:
    """Negate lower-is-better columns. A group already aligned is returned as is."""
    if group.aligned:
        return group
    sign = np.where(metrics.lower_better_mask(), -1.0, 1.0)
    return replace(group, raw_scores=group.raw_scores * sign, aligned=True)


def minmax_normalize(group: CandidateGroup) -> NormalizedGroup:
    if not group.aligned:
        raise ValueError(f"group {group.group_id!r} must be direction-aligned before normalizing")
    s = group.raw_scores
    if s.shape[0] < 2:
        raise SingletonGroup(f"group {group.group_id!r} has a single candidate")
    lo = s.min(axis=0)
    hi = s.max(axis=0)
    span = hi - lo
    constant = span == 0
    out = (s - lo) / np.where(constant, 1.0, span)
    out[:, constant] = CONSTANT_COLUMN_VALUE
    return NormalizedGroup(group.group_id, group.candidate_ids, out)


def hybrid_reward(group: NormalizedGroup, metrics: MetricSet) -> RewardVector:
    metrics.require_both_families()
    fr = group.normalized[:, metrics.family_indices(Family.FR)]
    nr = group.normalized[:, metrics.family_indices(Family.NR)]
    # sum/count rather than (0.5/count)*sum keeps an all-ones row exactly at 1
    rewards = 0.5 * (fr.sum(axis=1) / fr.shape[1]) + 0.5 * (nr.sum(axis=1) / nr.shape[1])
    return RewardVector(group.group_id, group.candidate_ids, rewards)


def group_rewards(group: CandidateGroup, metrics: MetricSet) -> RewardVector:
    return hybrid_reward(minmax_normalize(align_direction(group, metrics)), metrics)


def compute_rewards(groups: Sequence[CandidateGroup], metrics: MetricSet) -> list[RewardVector]:
    metrics.require_both_families()
    return [group_rewards(g, metrics) for g in groups]


def rank_candidates(rewards: RewardVector) -> np.ndarray:
    """Candidate indices sorted best first; ties keep ingestion order."""
    return np.argsort(-rewards.rewards, kind="stable")


def fixed_range_reward(
    raw_scores: np.ndarray,
    metrics: MetricSet,
    bounds: Mapping[str, tuple[float, float]],
) -> np.ndarray:
    """Hybrid reward with fixed per-metric ranges instead of per-group extremes.

    Used for evaluation, where rewards must be comparable across models and
    groups. ``bounds[name] = (worst, best)`` in raw units; normalized
    values are clipped to [0, 1].
    """
    metrics.require_both_families()
    raw = np.atleast_2d(np.asarray(raw_scores, dtype=np.float64))
    norm = np.empty_like(raw)
    for j, spec in enumerate(metrics):
        worst, best = bounds[spec.name]
        norm[:, j] = np.clip((raw[:, j] - worst) / (best - worst), 0.0, 1.0)
    fr = norm[:, metrics.family_indices(Family.FR)]
    nr = norm[:, metrics.family_indices(Family.NR)]
    return 0.5 * fr.mean(axis=1) + 0.5 * nr.mean(axis=1)
