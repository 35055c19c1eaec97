"""Fast invariant checks run by ``prefsr selftest``.

These are smaller versions of the test suite's property checks, kept in the
package so an installed copy can verify itself without the repository.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .curation import CurationConfig, curate_rewards
from .hpo import HpoMode, attach_weights
from .reward import RewardVector, align_direction, hybrid_reward, minmax_normalize
from .scores import CandidateGroup, Direction, Family, MetricSet, MetricSpec
from .toy import Architecture, Schedule, coeffs, init_params
from .trainer import pair_loss

CHECKS: list[tuple[str, Callable[[np.random.Generator], str | None]]] = []


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn

    return deco


def _random_metrics(rng, n_fr, n_nr):
    dirs = list(Direction)
    specs = [MetricSpec(f"fr{i}", Family.FR, dirs[rng.integers(2)]) for i in range(n_fr)]
    specs += [MetricSpec(f"nr{i}", Family.NR, dirs[rng.integers(2)]) for i in range(n_nr)]
    return MetricSet(tuple(specs))


@check("hybrid reward matches a term-by-term sum")
def _reward(rng):
    for _ in range(50):
        m, n_fr, n_nr = rng.integers(2, 9), rng.integers(1, 5), rng.integers(1, 5)
        metrics = _random_metrics(rng, n_fr, n_nr)
        raw = rng.normal(size=(m, n_fr + n_nr))
        group = CandidateGroup("g", [f"c{i}" for i in range(m)], raw)
        norm = minmax_normalize(align_direction(group, metrics))
        got = hybrid_reward(norm, metrics).rewards
        for i in range(m):
            fr = sum(norm.normalized[i, j] for j in range(n_fr)) / n_fr
            nr = sum(norm.normalized[i, n_fr + j] for j in range(n_nr)) / n_nr
            if abs(got[i] - (0.5 * fr + 0.5 * nr)) > 1e-12:
                return f"reward mismatch at candidate {i}"
    return None


@check("N^2 pairs per group with winners dominating losers")
def _curation(rng):
    for m in range(2, 33):
        rv = RewardVector("g", [f"c{i}" for i in range(m)], rng.random(m))
        for n in range(1, m // 2 + 1):
            ds = curate_rewards([rv], CurationConfig(n))
            if len(ds) != n * n:
                return f"M={m} N={n}: {len(ds)} pairs"
            if min(p.reward_gap for p in ds.pairs) < 0:
                return f"M={m} N={n}: negative gap"
    return None


@check("HPO weights average to one")
def _hpo(rng):
    groups = [RewardVector(f"g{k}", [f"c{i}" for i in range(8)], rng.random(8)) for k in range(20)]
    wds = attach_weights(curate_rewards(groups, CurationConfig(2)), HpoMode.BOTH)
    by_group: dict[str, list[float]] = {}
    inter: dict[str, float] = {}
    for wp in wds.pairs:
        by_group.setdefault(wp.pair.group_id, []).append(wp.w_intra)
        inter[wp.pair.group_id] = wp.w_inter
    if any(abs(np.mean(w) - 1) > 1e-12 for w in by_group.values()):
        return "intra weights do not average to 1"
    if abs(np.mean(list(inter.values())) - 1) > 1e-12:
        return "inter weights do not average to 1"
    return None


@check("schedule constraints")
def _schedule(rng):
    t = np.linspace(0.0, 1.0, 1001)
    a, s, _, _ = coeffs(Schedule("diffusion"), t)
    if np.max(np.abs(a * a + s * s - 1)) > 1e-12:
        return "diffusion alpha^2 + sigma^2 != 1"
    a, s, _, _ = coeffs(Schedule("flow"), t)
    if np.max(np.abs(a + s - 1)) > 1e-12:
        return "flow alpha + sigma != 1"
    return None


@check("identity policy gives log 2 and finite-difference gradients agree")
def _pair_loss(rng):
    for kind, head in (("diffusion", "epsilon"), ("flow", "velocity")):
        schedule = Schedule(kind)
        ref = init_params(Architecture(head=head), seed=int(rng.integers(1 << 30)))
        x = rng.normal(size=(4, 2))
        t = float(rng.uniform(0.05, 0.95))
        args = (x[0], x[1], rng.normal(size=2), t, x[2], x[3], float(rng.uniform(0.1, 10)), schedule)
        loss, _ = pair_loss(ref.copy(), ref.frozen_copy(), *args)
        if abs(loss - math.log(2)) > 1e-6:
            return f"{head}: identity loss {loss}"
        policy = ref.with_flat(ref.flat() + 0.05 * rng.normal(size=ref.size))
        _, grad = pair_loss(policy, ref.frozen_copy(), *args)
        theta = policy.flat()
        idx = rng.choice(theta.size, size=20, replace=False)
        fd = np.empty(idx.size)
        for k, i in enumerate(idx):
            e = np.zeros_like(theta)
            e[i] = 1e-4
            lp, _ = pair_loss(policy.with_flat(theta + e), ref.frozen_copy(), *args)
            lm, _ = pair_loss(policy.with_flat(theta - e), ref.frozen_copy(), *args)
            fd[k] = (lp - lm) / 2e-4
        rel = np.linalg.norm(fd - grad[idx]) / max(np.linalg.norm(fd), np.linalg.norm(grad[idx]), 1e-12)
        if rel > 1e-3:
            return f"{head}: gradient relative error {rel:.2e}"
    return None


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            problem = fn(np.random.default_rng(seed))
        except Exception as exc:  # report, don't abort the remaining checks
            problem = f"{type(exc).__name__}: {exc}"
        results.append((name, problem is None, problem or ""))
    return results
