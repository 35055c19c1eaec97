import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_reward
from prefsr.errors import EmptyFamily, SingletonGroup
from prefsr.reward import (
    NormalizedGroup,
    RewardVector,
    align_direction,
    fixed_range_reward,
    group_rewards,
    hybrid_reward,
    minmax_normalize,
    rank_candidates,
)
from prefsr.scores import CandidateGroup, MetricSet, MetricSpec


def _metrics(n_fr, n_nr, lower=()):
    specs = [MetricSpec(f"fr{i}", "FR", "lower" if f"fr{i}" in lower else "higher") for i in range(n_fr)]
    specs += [MetricSpec(f"nr{i}", "NR", "lower" if f"nr{i}" in lower else "higher") for i in range(n_nr)]
    return MetricSet(tuple(specs))


def _group(scores, gid="g"):
    scores = np.asarray(scores, dtype=float)
    return CandidateGroup(gid, [f"c{i}" for i in range(len(scores))], scores)


def test_align_negates_lower_better():
    metrics = MetricSet((MetricSpec("lpips", "FR", "lower"), MetricSpec("musiq", "NR", "higher")))
    g = align_direction(_group([[0.30, 60.0], [0.45, 70.0]]), metrics)
    np.testing.assert_array_equal(g.raw_scores[:, 0], [-0.30, -0.45])
    np.testing.assert_array_equal(g.raw_scores[:, 1], [60.0, 70.0])
    assert g.aligned


def test_align_idempotent():
    metrics = MetricSet((MetricSpec("lpips", "FR", "lower"), MetricSpec("musiq", "NR", "higher")))
    once = align_direction(_group([[0.30, 60.0], [0.45, 70.0]]), metrics)
    twice = align_direction(once, metrics)
    np.testing.assert_array_equal(once.raw_scores, twice.raw_scores)


def test_normalize_requires_alignment():
    with pytest.raises(ValueError):
        minmax_normalize(_group([[1.0], [2.0]]))


@pytest.mark.parametrize(
    "column, expected",
    [
        ([2.0, 4.0, 6.0], [0.0, 0.5, 1.0]),
        ([3.0, 3.0, 3.0], [0.5, 0.5, 0.5]),
    ],
)
def test_minmax_columns(column, expected):
    g = _group(np.array(column)[:, None])
    object.__setattr__(g, "aligned", True)
    np.testing.assert_array_equal(minmax_normalize(g).normalized[:, 0], expected)


def test_lower_better_column_normalizes_inverted():
    # raw LPIPS-like [0.45, 0.30] -> aligned [-0.45, -0.30] -> [0, 1]
    metrics = MetricSet((MetricSpec("lpips", "FR", "lower"), MetricSpec("nr", "NR", "higher")))
    g = align_direction(_group([[0.45, 1.0], [0.30, 2.0]]), metrics)
    np.testing.assert_array_equal(minmax_normalize(g).normalized[:, 0], [0.0, 1.0])


def test_singleton_group_rejected():
    with pytest.raises(SingletonGroup):
        _group([[1.0, 2.0]])


def test_hybrid_reward_hand_value():
    # |FR| = 2, |NR| = 3; FR (1, 0), NR (0.5, 0.5, 1): 0.5 * 0.5 + 0.5 * (2/3)
    metrics = _metrics(2, 3)
    norm = NormalizedGroup("g", ("c0", "c1"), np.array([[1.0, 0.0, 0.5, 0.5, 1.0], [0.0] * 5]))
    r = hybrid_reward(norm, metrics).rewards
    assert r[0] == pytest.approx(0.5 * 0.5 + 0.5 * (2.0 / 3.0), abs=1e-15)
    assert r[0] == pytest.approx(0.58333333333333333, abs=1e-15)
    assert r[1] == 0.0


def test_extreme_rewards():
    metrics = _metrics(3, 6)
    norm = NormalizedGroup("g", ("c0", "c1"), np.array([[1.0] * 9, [0.0] * 9]))
    r = hybrid_reward(norm, metrics).rewards
    assert r[0] == 1.0
    assert r[1] == 0.0


def test_empty_family():
    metrics = MetricSet((MetricSpec("a", "FR", "higher"), MetricSpec("b", "FR", "higher")))
    with pytest.raises(EmptyFamily):
        hybrid_reward(NormalizedGroup("g", ("c0", "c1"), np.zeros((2, 2))), metrics)


def test_rank_examples():
    np.testing.assert_array_equal(rank_candidates(RewardVector("g", ["a", "b", "c"], [0.2, 0.9, 0.5])), [1, 2, 0])
    np.testing.assert_array_equal(rank_candidates(RewardVector("g", ["a", "b"], [0.5, 0.5])), [0, 1])


def test_rank_matches_sort_oracle(rng):
    for _ in range(20):
        r = np.round(rng.random(64), 1)  # coarse values force ties
        order = sorted(range(64), key=lambda i: (-r[i], i))
        np.testing.assert_array_equal(rank_candidates(RewardVector("g", [str(i) for i in range(64)], r)), order)


def test_oracle_equivalence(rng):
    for _ in range(200):
        m, n_fr, n_nr = rng.integers(2, 9), rng.integers(1, 5), rng.integers(1, 5)
        lower = {name for name in [f"fr{i}" for i in range(n_fr)] + [f"nr{i}" for i in range(n_nr)] if rng.random() < 0.5}
        metrics = _metrics(n_fr, n_nr, lower)
        raw = rng.normal(size=(m, n_fr + n_nr))
        raw[:, rng.integers(n_fr + n_nr)] = 1.5 if rng.random() < 0.2 else raw[:, 0]  # sometimes a constant column
        expected, _ = naive_reward(raw.tolist(), [s.name in lower for s in metrics], [s.family.value for s in metrics])
        np.testing.assert_allclose(group_rewards(_group(raw), metrics).rewards, expected, rtol=0, atol=1e-12)


def test_best_everywhere_gets_one(rng):
    metrics = _metrics(2, 2, lower={"fr1"})
    raw = rng.normal(size=(6, 4))
    raw[3] = raw.max(axis=0)
    raw[3, 1] = raw[:, 1].min()  # lower-better column: best is the minimum
    rv = group_rewards(_group(raw), metrics)
    assert rv.rewards[3] == 1.0
    assert rank_candidates(rv)[0] == 3


@settings(max_examples=100, deadline=None)
@given(
    st.integers(2, 8),
    st.floats(0.01, 100.0),
    st.floats(-100.0, 100.0),
    st.integers(0, 2**32 - 1),
)
def test_affine_invariance(m, scale, shift, seed):
    rng = np.random.default_rng(seed)
    metrics = _metrics(1, 2, lower={"nr1"})
    raw = rng.normal(size=(m, 3))
    moved = raw.copy()
    moved[:, 0] = scale * raw[:, 0] + shift
    a = group_rewards(_group(raw), metrics)
    b = group_rewards(_group(moved), metrics)
    np.testing.assert_allclose(a.rewards, b.rewards, atol=1e-9)
    ra, rb = np.round(a.rewards, 9), np.round(b.rewards, 9)
    np.testing.assert_array_equal(rank_candidates(RewardVector("g", a.candidate_ids, ra)),
                                  rank_candidates(RewardVector("g", b.candidate_ids, rb)))


def test_per_group_isolation(rng):
    metrics = _metrics(1, 1)
    a, b = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    ra = group_rewards(_group(a, "A"), metrics).rewards
    b[0, 0] = 1e6
    group_rewards(_group(b, "B"), metrics)
    np.testing.assert_array_equal(group_rewards(_group(a, "A"), metrics).rewards, ra)


def test_fixed_range_reward():
    metrics = MetricSet((MetricSpec("dist", "FR", "lower"), MetricSpec("q", "NR", "higher")))
    bounds = {"dist": (2.0, 0.0), "q": (0.0, 10.0)}
    r = fixed_range_reward(np.array([[0.0, 10.0], [2.0, 0.0], [1.0, 5.0], [5.0, 20.0]]), metrics, bounds)
    np.testing.assert_allclose(r, [1.0, 0.0, 0.5, 0.5])
