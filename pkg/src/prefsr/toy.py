"""Desk-scale conditional generator.

Interpolation ``x_t = alpha_t * x0 + sigma_t * eps`` with either a cosine
diffusion schedule (alpha^2 + sigma^2 = 1) or a linear flow schedule
(alpha + sigma = 1), a small tanh MLP with hand-written reverse mode, and
deterministic DDIM / Euler samplers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, FrozenParameters, OutOfRangeT

CHECKPOINT_FORMAT = "prefsr-mlp"
CHECKPOINT_VERSION = 1


class ScheduleKind(str, Enum):
    DIFFUSION = "diffusion"
    FLOW = "flow"


class Head(str, Enum):
    EPSILON = "epsilon"
    VELOCITY = "velocity"


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind = ScheduleKind.FLOW
    steps: int = 20

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def default_head(self) -> Head:
        return Head.EPSILON if self.kind == ScheduleKind.DIFFUSION else Head.VELOCITY


def coeffs(schedule: Schedule, t):
    """Return ``(alpha, sigma, d alpha/dt, d sigma/dt)`` at ``t`` (scalar or array)."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t_arr)) or np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise OutOfRangeT(f"t must lie in [0, 1], got {t}")
    if schedule.kind == ScheduleKind.FLOW:
        alpha = 1.0 - t_arr
        sigma = t_arr
        dalpha = -np.ones_like(t_arr)
        dsigma = np.ones_like(t_arr)
    else:
        half_pi = 0.5 * math.pi
        alpha = np.cos(half_pi * t_arr)
        sigma = np.sin(half_pi * t_arr)
        dalpha = -half_pi * sigma
        dsigma = half_pi * alpha
    if np.ndim(t) == 0:
        return float(alpha), float(sigma), float(dalpha), float(dsigma)
    return alpha, sigma, dalpha, dsigma


def _col(v):
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def forward_noise(x0, t, eps, schedule: Schedule) -> np.ndarray:
    """``alpha_t * x0 + sigma_t * eps``; ``t`` is a scalar or one value per row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionMismatch(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    alpha, sigma, _, _ = coeffs(schedule, t)
    if np.ndim(t) > 0:
        alpha, sigma = _col(alpha), _col(sigma)
    return alpha * x0 + sigma * eps


def prediction_target(x0, t, eps, schedule: Schedule, head: Head) -> np.ndarray:
    """Regression target for ``head``: the noise, or the path velocity."""
    eps = np.asarray(eps, dtype=np.float64)
    if Head(head) == Head.EPSILON:
        return eps
    _, _, dalpha, dsigma = coeffs(schedule, t)
    if np.ndim(t) > 0:
        dalpha, dsigma = _col(dalpha), _col(dsigma)
    return dalpha * np.asarray(x0, dtype=np.float64) + dsigma * eps


# --- network -----------------------------------------------------------------

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class Architecture:
    data_dim: int = 2
    cond_dim: int = 2
    hidden: int = 64
    head: Head = Head.VELOCITY

    def __post_init__(self):
        object.__setattr__(self, "head", Head(self.head))

    @property
    def input_dim(self) -> int:
        return self.data_dim + 1 + self.cond_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.hidden
        return {
            "W1": (self.input_dim, h),
            "b1": (h,),
            "W2": (h, h),
            "b2": (h,),
            "W3": (h, self.data_dim),
            "b3": (self.data_dim,),
        }

    def to_dict(self) -> dict:
        return {"data_dim": self.data_dim, "cond_dim": self.cond_dim, "hidden": self.hidden, "head": self.head.value}


@dataclass(eq=False)
class NetworkParams:
    """Weights of the denoiser. ``frozen`` params refuse gradient requests."""

    arch: Architecture
    weights: dict[str, np.ndarray]
    frozen: bool = False

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in PARAM_NAMES])

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for s in self.arch.shapes().values())

    def with_flat(self, vec, frozen: bool = False) -> "NetworkParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise DimensionMismatch(f"expected {self.size} parameters, got {vec.shape}")
        weights, i = {}, 0
        for k, shape in self.arch.shapes().items():
            n = int(np.prod(shape))
            weights[k] = vec[i : i + n].reshape(shape).copy()
            i += n
        return NetworkParams(self.arch, weights, frozen)

    def copy(self, frozen: bool = False) -> "NetworkParams":
        return self.with_flat(self.flat(), frozen=frozen)

    def frozen_copy(self) -> "NetworkParams":
        return self.copy(frozen=True)


def init_params(arch: Architecture, seed: int = 0, zero: bool = False) -> NetworkParams:
    rng = np.random.default_rng(seed)
    weights = {}
    for k, shape in arch.shapes().items():
        if zero or k.startswith("b"):
            weights[k] = np.zeros(shape)
        else:
            weights[k] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
    # small output layer so an untrained net starts near the zero field
    if not zero:
        weights["W3"] *= 0.1
    return NetworkParams(arch, weights)


def _inputs(arch: Architecture, x_t, t, cond) -> np.ndarray:
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    b = x_t.shape[0]
    if x_t.shape[1] != arch.data_dim:
        raise DimensionMismatch(f"x_t has dim {x_t.shape[1]}, network expects {arch.data_dim}")
    if cond.shape[1] != arch.cond_dim:
        raise DimensionMismatch(f"cond has dim {cond.shape[1]}, network expects {arch.cond_dim}")
    if cond.shape[0] != b:
        if cond.shape[0] != 1:
            raise DimensionMismatch("cond batch does not match x_t batch")
        cond = np.broadcast_to(cond, (b, arch.cond_dim))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (b, 1))
    return np.concatenate([x_t, t, cond], axis=1)


def _forward(params: NetworkParams, inp: np.ndarray):
    w = params.weights
    h1 = np.tanh(inp @ w["W1"] + w["b1"])
    h2 = np.tanh(h1 @ w["W2"] + w["b2"])
    out = h2 @ w["W3"] + w["b3"]
    return out, (inp, h1, h2)


def _backward(params: NetworkParams, cache, upstream: np.ndarray):
    w = params.weights
    inp, h1, h2 = cache
    g = upstream
    grads = {"W3": h2.T @ g, "b3": g.sum(axis=0)}
    g2 = (g @ w["W3"].T) * (1.0 - h2 * h2)
    grads["W2"] = h1.T @ g2
    grads["b2"] = g2.sum(axis=0)
    g1 = (g2 @ w["W2"].T) * (1.0 - h1 * h1)
    grads["W1"] = inp.T @ g1
    grads["b1"] = g1.sum(axis=0)
    g_inp = g1 @ w["W1"].T
    return grads, g_inp


def predict(params: NetworkParams, x_t, t, cond) -> np.ndarray:
    """Network output for a batch (or a single vector) of noisy inputs."""
    single = np.ndim(x_t) == 1
    out, _ = _forward(params, _inputs(params.arch, x_t, t, cond))
    return out[0] if single else out


def backward(params: NetworkParams, x_t, t, cond, upstream_grad):
    """Reverse-mode gradient of ``sum(upstream_grad * predict(...))``.

    Returns ``(flat parameter gradient, gradient w.r.t. x_t)``.
    """
    if params.frozen:
        raise FrozenParameters("gradients are never computed for frozen (reference) parameters")
    single = np.ndim(x_t) == 1
    inp = _inputs(params.arch, x_t, t, cond)
    up = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    if up.shape != (inp.shape[0], params.arch.data_dim):
        raise DimensionMismatch(f"upstream gradient shape {up.shape} does not match output")
    _, cache = _forward(params, inp)
    grads, g_inp = _backward(params, cache, up)
    g_x = g_inp[:, : params.arch.data_dim]
    return flatten_grads(grads), (g_x[0] if single else g_x)


def flatten_grads(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in PARAM_NAMES])


def predict_with_grad(params: NetworkParams, inp: np.ndarray):
    """Forward pass that also returns a closure mapping upstream grads to flat param grads."""
    if params.frozen:
        raise FrozenParameters("gradients are never computed for frozen (reference) parameters")
    out, cache = _forward(params, inp)

    def vjp(upstream):
        grads, _ = _backward(params, cache, upstream)
        return flatten_grads(grads)

    return out, vjp


def network_inputs(arch: Architecture, x_t, t, cond) -> np.ndarray:
    return _inputs(arch, x_t, t, cond)


def forward_inputs(params: NetworkParams, inp: np.ndarray) -> np.ndarray:
    return _forward(params, inp)[0]


# --- sampling ----------------------------------------------------------------


class SamplerMethod(str, Enum):
    DDIM = "ddim"
    EULER = "euler"


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    method: SamplerMethod | None = None  # None: DDIM for epsilon heads, Euler for velocity heads
    x0_clip: float = 3.0

    def resolved(self, head: Head) -> SamplerMethod:
        if self.method is not None:
            return SamplerMethod(self.method)
        return SamplerMethod.DDIM if Head(head) == Head.EPSILON else SamplerMethod.EULER


@dataclass(frozen=True, eq=False)
class Rollout:
    cond: np.ndarray
    seed: int
    sample: np.ndarray
    trajectory_len: int


def split_prediction(pred, x_t, t, schedule: Schedule, head: Head, clip: float | None = None):
    """Recover ``(x0_hat, eps_hat)`` from a network output at time ``t``."""
    alpha, sigma, dalpha, dsigma = coeffs(schedule, t)
    if Head(head) == Head.EPSILON:
        eps_hat = pred
        x0_hat = (x_t - sigma * eps_hat) / max(alpha, 1e-4)
        if clip is not None:
            x0_hat = np.clip(x0_hat, -clip, clip)
        return x0_hat, eps_hat
    det = dsigma * alpha - sigma * dalpha
    x0_hat = (dsigma * x_t - sigma * pred) / det
    eps_hat = (alpha * pred - dalpha * x_t) / det
    return x0_hat, eps_hat


def initial_noise(seed: int, dim: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(dim)


def sample_batch(
    params: NetworkParams,
    conds,
    seeds: Sequence[int],
    schedule: Schedule,
    sampler: SamplerConfig | None = None,
) -> np.ndarray:
    """Generate one sample per (cond, seed) row, starting from seeded noise at t = 1."""
    sampler = sampler or SamplerConfig(steps=schedule.steps)
    head = params.arch.head
    method = sampler.resolved(head)
    conds = np.atleast_2d(np.asarray(conds, dtype=np.float64))
    if conds.shape[0] != len(seeds):
        raise DimensionMismatch("need one seed per condition row")
    x = np.stack([initial_noise(int(s), params.arch.data_dim) for s in seeds])
    grid = np.linspace(1.0, 0.0, sampler.steps + 1)
    for t, s in zip(grid[:-1], grid[1:]):
        pred = predict(params, x, t, conds)
        if method == SamplerMethod.EULER:
            if head == Head.VELOCITY:
                v = pred
            else:
                x0_hat, eps_hat = split_prediction(pred, x, t, schedule, head, sampler.x0_clip)
                _, _, dalpha, dsigma = coeffs(schedule, t)
                v = dalpha * x0_hat + dsigma * eps_hat
            x = x + (s - t) * v
        else:
            x0_hat, eps_hat = split_prediction(pred, x, t, schedule, head, sampler.x0_clip)
            alpha_s, sigma_s, _, _ = coeffs(schedule, s)
            x = alpha_s * x0_hat + sigma_s * eps_hat
    return x


def sample_rollout(params: NetworkParams, cond, seed: int, schedule: Schedule, sampler: SamplerConfig | None = None) -> Rollout:
    sampler = sampler or SamplerConfig(steps=schedule.steps)
    sample = sample_batch(params, np.atleast_2d(cond), [seed], schedule, sampler)[0]
    return Rollout(np.asarray(cond, dtype=np.float64), seed, sample, sampler.steps)


# --- checkpoints ---------------------------------------------------------------


def params_to_json(params: NetworkParams, extra: dict | None = None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": params.arch.to_dict(),
        "param_order": list(PARAM_NAMES),
        "params": params.flat().tolist(),
    }
    if extra:
        doc["meta"] = extra
    return json.dumps(doc)


def params_from_json(text: str) -> NetworkParams:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a recognised checkpoint")
    arch = Architecture(**doc["architecture"])
    template = init_params(arch, zero=True)
    return template.with_flat(np.array(doc["params"], dtype=np.float64))


def save_params(params: NetworkParams, path, extra: dict | None = None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(params_to_json(params, extra))


def load_params(path) -> NetworkParams:
    with open(path, encoding="utf-8") as f:
        return params_from_json(f.read())
