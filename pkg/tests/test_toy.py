import math

import numpy as np
import pytest

from oracles import central_difference, relative_error, scalar_mlp, schedule_coeffs
from prefsr.errors import DimensionMismatch, FrozenParameters, OutOfRangeT
from prefsr.task import ToyTask
from prefsr.toy import (
    Architecture,
    Schedule,
    SamplerConfig,
    backward,
    coeffs,
    forward_noise,
    init_params,
    initial_noise,
    load_params,
    predict,
    prediction_target,
    sample_batch,
    sample_rollout,
    save_params,
    split_prediction,
)

FLOW = Schedule("flow")
DIFF = Schedule("diffusion")


def _random_params(rng, head="velocity", scale=1.0):
    p = init_params(Architecture(head=head), seed=int(rng.integers(1 << 30)))
    return p.with_flat(p.flat() + scale * 0.1 * rng.normal(size=p.size))


def test_flow_coeffs_at_zero():
    assert coeffs(FLOW, 0.0) == (1.0, 0.0, -1.0, 1.0)


def test_diffusion_symmetry_point():
    a, s, _, _ = coeffs(DIFF, 0.5)
    assert a == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert s == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert abs(a * a + s * s - 1) < 1e-15


def test_schedule_constraints_grid(rng):
    t = rng.uniform(0, 1, 1000)
    a, s, _, _ = coeffs(DIFF, t)
    assert np.max(np.abs(a * a + s * s - 1)) < 1e-12
    a, s, _, _ = coeffs(FLOW, t)
    assert np.max(np.abs(a + s - 1)) < 1e-12


@pytest.mark.parametrize("schedule", [FLOW, DIFF])
def test_schedule_matches_oracle_and_fd(schedule, rng):
    h = 1e-5
    for t in rng.uniform(h, 1 - h, 50):
        got = coeffs(schedule, float(t))
        np.testing.assert_allclose(got, schedule_coeffs(schedule.kind.value, float(t)), atol=1e-15)
        ap, sp, _, _ = coeffs(schedule, float(t) + h)
        am, sm, _, _ = coeffs(schedule, float(t) - h)
        assert abs((ap - am) / (2 * h) - got[2]) < 1e-6
        assert abs((sp - sm) / (2 * h) - got[3]) < 1e-6


def test_endpoints():
    assert coeffs(DIFF, 0.0)[:2] == (1.0, 0.0)
    assert abs(coeffs(DIFF, 1.0)[0]) < 1e-15
    assert coeffs(FLOW, 1.0)[:2] == (0.0, 1.0)


@pytest.mark.parametrize("t", [-0.01, 1.01, float("nan")])
def test_out_of_range_t(t):
    with pytest.raises(OutOfRangeT):
        coeffs(FLOW, t)


def test_forward_noise_example():
    np.testing.assert_array_equal(forward_noise([1.0, 0.0], 0.25, [0.0, 1.0], FLOW), [0.75, 0.25])


@pytest.mark.parametrize("schedule", [FLOW, DIFF])
def test_forward_noise_endpoints(schedule, rng):
    x0, eps = rng.normal(size=(2, 5, 2))
    np.testing.assert_array_equal(forward_noise(x0, 0.0, eps, schedule), x0)
    if schedule is FLOW:
        np.testing.assert_array_equal(forward_noise(x0, 1.0, eps, schedule), eps)


def test_forward_noise_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        forward_noise([1.0, 0.0], 0.5, [1.0, 0.0, 0.0], FLOW)


def test_velocity_target_flow(rng):
    x0, eps = rng.normal(size=(2, 4, 2))
    np.testing.assert_array_equal(prediction_target(x0, 0.3, eps, FLOW, "velocity"), eps - x0)
    np.testing.assert_array_equal(prediction_target(x0, 0.3, eps, FLOW, "epsilon"), eps)


@pytest.mark.parametrize("schedule, head", [(FLOW, "velocity"), (DIFF, "epsilon"), (DIFF, "velocity")])
def test_split_prediction_inverts_targets(schedule, head, rng):
    x0, eps = rng.normal(size=(2, 6, 2))
    t = 0.37
    x_t = forward_noise(x0, t, eps, schedule)
    pred = prediction_target(x0, t, eps, schedule, head)
    x0_hat, eps_hat = split_prediction(pred, x_t, t, schedule, head)
    np.testing.assert_allclose(x0_hat, x0, atol=1e-12)
    np.testing.assert_allclose(eps_hat, eps, atol=1e-12)


def test_zero_network():
    p = init_params(Architecture(), zero=True)
    np.testing.assert_array_equal(predict(p, [0.3, -0.2], 0.5, [1.0, 0.0]), [0.0, 0.0])


def test_predict_matches_scalar_oracle(rng):
    for head in ("velocity", "epsilon"):
        p = _random_params(rng, head, scale=5.0)
        for _ in range(3):
            x, c, t = rng.normal(size=2), rng.normal(size=2), float(rng.random())
            np.testing.assert_allclose(predict(p, x, t, c), scalar_mlp(p.weights, x, t, c), rtol=0, atol=1e-12)


def test_batch_identical_rows(rng):
    p = _random_params(rng)
    out = predict(p, np.tile(rng.normal(size=2), (2, 1)), 0.4, rng.normal(size=2))
    np.testing.assert_array_equal(out[0], out[1])


def test_predict_dimension_mismatch(rng):
    p = _random_params(rng)
    with pytest.raises(DimensionMismatch):
        predict(p, [0.0, 0.0, 0.0], 0.5, [0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        predict(p, [0.0, 0.0], 0.5, [0.0])


def test_zero_upstream_zero_gradient(rng):
    p = _random_params(rng)
    grad, gx = backward(p, rng.normal(size=(3, 2)), 0.5, rng.normal(size=(3, 2)), np.zeros((3, 2)))
    assert not np.any(grad)
    assert not np.any(gx)


def test_frozen_params_refuse_backward(rng):
    p = _random_params(rng).frozen_copy()
    with pytest.raises(FrozenParameters):
        backward(p, [0.0, 0.0], 0.5, [0.0, 0.0], [1.0, 1.0])


@pytest.mark.parametrize("head", ["velocity", "epsilon"])
def test_backward_all_parameters_fd(head, rng):
    p = _random_params(rng, head, scale=3.0)
    x, c, t, up = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.random(3), rng.normal(size=(3, 2))
    grad, gx = backward(p, x, t, c, up)

    def f(theta):
        return float(np.sum(up * predict(p.with_flat(theta), x, t, c)))

    fd = central_difference(f, p.flat(), np.arange(p.size))
    assert relative_error(grad, fd) < 1e-3
    np.testing.assert_allclose(grad, fd, atol=1e-7)

    def fx(flat_x):
        return float(np.sum(up * predict(p, flat_x.reshape(3, 2), t, c)))

    fdx = central_difference(fx, x.ravel(), np.arange(6))
    np.testing.assert_allclose(gx.ravel(), fdx, atol=1e-8)


def test_sampler_zero_field_single_step():
    p = init_params(Architecture(head="velocity"), zero=True)
    r = sample_rollout(p, [0.5, 0.5], 11, FLOW, SamplerConfig(steps=1))
    np.testing.assert_array_equal(r.sample, initial_noise(11, 2))
    assert r.trajectory_len == 1


@pytest.mark.parametrize("schedule, head", [(FLOW, "velocity"), (DIFF, "epsilon")])
def test_sampler_determinism(schedule, head, rng):
    p = _random_params(rng, head)
    a = sample_rollout(p, [0.2, 0.9], 3, schedule)
    b = sample_rollout(p.copy(), [0.2, 0.9], 3, schedule)
    np.testing.assert_array_equal(a.sample, b.sample)
    assert not np.array_equal(a.sample, sample_rollout(p, [0.2, 0.9], 4, schedule).sample)


def test_batch_sampling_matches_single(rng):
    p = _random_params(rng)
    conds = rng.normal(size=(4, 2))
    batch = sample_batch(p, conds, [1, 2, 3, 4], FLOW)
    for i in range(4):
        np.testing.assert_allclose(batch[i], sample_rollout(p, conds[i], i + 1, FLOW).sample, atol=1e-14)


def test_checkpoint_round_trip(tmp_path, rng):
    p = _random_params(rng, "epsilon")
    save_params(p, tmp_path / "ckpt.json", {"note": "x"})
    q = load_params(tmp_path / "ckpt.json")
    assert q.arch == p.arch
    np.testing.assert_array_equal(q.flat(), p.flat())


def test_pretrained_samples_on_manifold(flow_reference):
    _, conds = ToyTask().sample_conditions(500, 42)
    x = sample_batch(flow_reference, conds, list(range(500)), FLOW)
    ring = np.abs(np.linalg.norm(x, axis=1) - 1)
    assert np.mean(ring < 0.1) >= 0.9
