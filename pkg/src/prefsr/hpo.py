"""Hierarchical pair weighting.

Intra-group weight: |reward gap| + (1 - mean gap of the group's pairs).
Inter-group weight: population std of the group's rewards + (1 - mean std
over the corpus). Both average to one at their own level; a pair's total
weight is their product.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .curation import PairDataset, PreferencePair
from .errors import EmptyCorpus, EmptyGroup, SingletonGroup
from .reward import RewardVector


class HpoMode(str, Enum):
    BASE = "base"
    INTRA = "intra"
    INTER = "inter"
    BOTH = "both"


@dataclass(frozen=True)
class WeightedPair:
    pair: PreferencePair
    w_intra: float
    w_inter: float
    w_total: float

    def to_dict(self) -> dict:
        return {
            **self.pair.to_dict(),
            "w_intra": self.w_intra,
            "w_inter": self.w_inter,
            "w_total": self.w_total,
        }


@dataclass(frozen=True)
class WeightedPairDataset:
    pairs: tuple[WeightedPair, ...]
    mode: HpoMode

    def __len__(self):
        return len(self.pairs)


def intra_weights(group_pairs: Sequence[PreferencePair]) -> np.ndarray:
    if not group_pairs:
        raise EmptyGroup("cannot weight an empty group of pairs")
    if len({p.group_id for p in group_pairs}) != 1:
        raise ValueError("intra weights need pairs from a single group")
    gaps = np.abs([p.reward_gap for p in group_pairs])
    return gaps + (1.0 - gaps.mean())


def inter_weights(groups: Sequence[RewardVector]) -> np.ndarray:
    if not groups:
        raise EmptyCorpus("cannot weight an empty corpus")
    for g in groups:
        if len(g) < 2:
            raise SingletonGroup(f"group {g.group_id!r} has a single candidate")
    sigma = np.array([np.std(g.rewards) for g in groups])
    return sigma + (1.0 - sigma.mean())


def attach_weights(dataset: PairDataset, mode: HpoMode | str = HpoMode.BOTH) -> WeightedPairDataset:
    mode = HpoMode(mode)
    by_group = dataset.pairs_by_group()
    if mode in (HpoMode.INTER, HpoMode.BOTH):
        # only groups that contributed pairs form the corpus
        present = [g for g in dataset.groups if by_group[g.group_id]]
        inter = dict(zip((g.group_id for g in present), inter_weights(present)))
    else:
        inter = {}

    intra: dict[tuple[str, int], float] = {}
    if mode in (HpoMode.INTRA, HpoMode.BOTH):
        for gid, pairs in by_group.items():
            if pairs:
                for i, w in enumerate(intra_weights(pairs)):
                    intra[gid, i] = float(w)

    out = []
    position: dict[str, int] = {}
    for p in dataset.pairs:
        i = position.get(p.group_id, 0)
        position[p.group_id] = i + 1
        wa = intra.get((p.group_id, i), 1.0)
        we = float(inter.get(p.group_id, 1.0))
        out.append(WeightedPair(p, wa, we, wa * we))
    return WeightedPairDataset(tuple(out), mode)
