from fractions import Fraction

import numpy as np
import pytest

from prefsr.errors import DivergenceDetected, EmptyList, SampleCountMismatch
from prefsr.stats import (
    RolloutStats,
    SweepGrid,
    average_stats,
    format_mean_std,
    format_mean_std_table,
    mean_std_report,
    prefix_stats,
    rollout_stats,
    run_sweep,
)
from prefsr.trainer import TrainRun, DpoConfig


def test_single_reward():
    assert rollout_stats([0.4]) == RolloutStats(1, 0.4, 0.4, 0.4)


def test_two_rewards():
    assert rollout_stats([0.2, 0.8]) == RolloutStats(2, 0.8, 0.5, 0.2)


def test_empty():
    with pytest.raises(EmptyList):
        rollout_stats([])


def test_sort_oracle(rng):
    for _ in range(50):
        r = rng.random(int(rng.integers(1, 40)))
        s = sorted(r.tolist())
        st = rollout_stats(r)
        assert (st.best, st.worst) == (s[-1], s[0])
        assert st.worst <= st.mean <= st.best


def test_prefix_monotonicity(rng):
    stats = prefix_stats(rng.random(64), [1, 2, 4, 8, 16, 32, 64])
    assert all(a.best <= b.best for a, b in zip(stats, stats[1:]))
    assert all(a.worst >= b.worst for a, b in zip(stats, stats[1:]))


def test_average_stats():
    avg = average_stats([RolloutStats(2, 0.8, 0.5, 0.2), RolloutStats(2, 0.6, 0.3, 0.0)])
    assert avg == RolloutStats(2, pytest.approx(0.7), pytest.approx(0.4), pytest.approx(0.1))
    with pytest.raises(ValueError):
        average_stats([RolloutStats(2, 1, 1, 1), RolloutStats(3, 1, 1, 1)])


def test_mean_std_constant():
    rows = mean_std_report(np.full((3, 10, 2), 0.7), ["a", "b"])
    assert [r.std for r in rows] == [0.0, 0.0]
    assert rows[0].mean == pytest.approx(0.7)


def test_mean_std_hand_table():
    # input 1 alternates 0.4/0.6, input 2 alternates 0.2/0.4 (same phase);
    # run means alternate 0.3/0.5 -> mean 0.4, population std 0.1
    first = [0.4, 0.6] * 5
    second = [0.2, 0.4] * 5
    scores = np.array([first, second])[:, :, None]
    (row,) = mean_std_report(scores, ["q"])
    assert row.mean == pytest.approx(0.4, abs=1e-15)
    assert row.std == pytest.approx(0.1, abs=1e-15)
    assert row.formatted() == "0.400±0.100"


def test_sample_count_mismatch():
    with pytest.raises(SampleCountMismatch):
        mean_std_report(np.zeros((2, 9, 1)), ["q"])


def test_format():
    assert format_mean_std(0.4051, 0.0088) == "0.405±0.009"
    table = format_mean_std_table(mean_std_report(np.full((2, 10, 1), 0.405), ["musiq"]), "ours")
    assert table.splitlines() == ["method & musiq", "ours & 0.405±0.000"]


def test_grid_feasibility():
    cells = SweepGrid((8, 16), (Fraction(1, 4), Fraction(1, 2))).cells()
    assert [(m, n) for m, n, _ in cells] == [(8, 2), (8, 4), (16, 4), (16, 8)]
    assert all(2 * n <= m for m, n, _ in cells)


def test_grid_drops_infeasible():
    cells = SweepGrid((4, 6), (Fraction(1, 4), Fraction(3, 4))).cells()
    assert [(m, n) for m, n, _ in cells] == [(4, 1)]


def _fake_run(m, n):
    run = TrainRun(DpoConfig(), [0.7, 0.6], [(0, RolloutStats(m, 0.9, 0.5, 0.1)), (2, RolloutStats(m, 0.9, n / m, 0.2))])
    return run


def test_singleton_grid_equals_single_run():
    report = run_sweep(SweepGrid((8,), (Fraction(1, 4),)), _fake_run)
    assert len(report.cells) == 1
    single = _fake_run(8, 2)
    assert report.cells[0].run.loss_log == single.loss_log
    assert report.cells[0].run.reward_stats_log == single.reward_stats_log
    assert report.final_means() == {(8, 2): 0.25}


def test_failed_cell_recorded():
    def run_cell(m, n):
        if m == 16:
            raise DivergenceDetected("boom", partial=TrainRun(DpoConfig(), [0.7]))
        return _fake_run(m, n)

    report = run_sweep(SweepGrid((8, 16), (Fraction(1, 4),)), run_cell)
    assert [c.status for c in report.cells] == ["ok", "failed"]
    assert report.cells[1].run.loss_log == [0.7]
    assert report.final_means()[16, 4] is None
