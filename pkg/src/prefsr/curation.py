"""Top-N / bottom-N preference pair curation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GroupSizeMismatch, RatioTooLarge
from .reward import RewardVector, compute_rewards, rank_candidates
from .scores import CandidateGroup, MetricSet


@dataclass(frozen=True)
class CurationConfig:
    n: int
    m: int | None = None
    strict_m: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("N must be a positive integer")
        if self.m is not None and 2 * self.n > self.m:
            raise RatioTooLarge(f"2N = {2 * self.n} exceeds M = {self.m}")
        if self.strict_m and self.m is None:
            raise ValueError("strict_m requires M")


@dataclass(frozen=True)
class PreferencePair:
    group_id: str
    winner_id: str
    loser_id: str
    reward_gap: float

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "winner_id": self.winner_id,
            "loser_id": self.loser_id,
            "reward_gap": self.reward_gap,
        }


@dataclass(frozen=True)
class PairDataset:
    """Curated pairs plus the reward vector of every contributing group."""

    pairs: tuple[PreferencePair, ...]
    groups: tuple[RewardVector, ...]

    def __len__(self):
        return len(self.pairs)

    def pairs_by_group(self) -> dict[str, list[PreferencePair]]:
        out: dict[str, list[PreferencePair]] = {g.group_id: [] for g in self.groups}
        for p in self.pairs:
            out[p.group_id].append(p)
        return out


def select_extremes(ranking: Sequence[int], n: int) -> tuple[list[int], list[int]]:
    """First ``n`` and last ``n`` entries of a best-first ranking."""
    ranking = list(ranking)
    if n < 1:
        raise ValueError("N must be a positive integer")
    if 2 * n > len(ranking):
        raise RatioTooLarge(f"2N = {2 * n} exceeds M = {len(ranking)}")
    return ranking[:n], ranking[-n:]


def build_pairs(top: Sequence[int], bottom: Sequence[int], rewards: RewardVector) -> list[PreferencePair]:
    r = rewards.rewards
    ids = rewards.candidate_ids
    return [
        PreferencePair(rewards.group_id, ids[w], ids[l], float(r[w] - r[l]))
        for w in top
        for l in bottom
    ]


def curate_rewards(groups: Sequence[RewardVector], config: CurationConfig) -> PairDataset:
    pairs: list[PreferencePair] = []
    for rv in groups:
        if config.strict_m and len(rv) != config.m:
            raise GroupSizeMismatch(f"group {rv.group_id!r} has {len(rv)} candidates, expected M = {config.m}")
        try:
            top, bottom = select_extremes(rank_candidates(rv), config.n)
        except RatioTooLarge as exc:
            raise RatioTooLarge(f"group {rv.group_id!r}: {exc}") from None
        pairs.extend(build_pairs(top, bottom, rv))
    return PairDataset(tuple(pairs), tuple(groups))


def curate_dataset(groups: Sequence[CandidateGroup], metrics: MetricSet, config: CurationConfig) -> PairDataset:
    return curate_rewards(compute_rewards(groups, metrics), config)


def reward_lookup(dataset: PairDataset) -> dict[tuple[str, str], float]:
    return {
        (rv.group_id, cid): float(r)
        for rv in dataset.groups
        for cid, r in zip(rv.candidate_ids, np.asarray(rv.rewards))
    }
