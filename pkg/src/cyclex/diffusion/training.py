"""Noise-prediction training: MSE objective, Adam, single gradient steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import Denoiser
from .schedule import NoiseSchedule, forward_diffuse


class TrainingError(RuntimeError):
    """Raised when a step produces a non-finite loss."""


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def loss_and_grads(
    model: Denoiser,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    cond: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
):
    """Mean squared error between drawn noise and the model's prediction.

    x0 (B,1,S,S), cond (B,cond_rows), t (B,) in 1..T, eps like x0. Fixed
    (t, eps) makes this a deterministic function of the parameters, which is
    what the finite-difference checks differentiate.
    """
    dt = model.cfg.np_dtype
    abar = np.concatenate(([1.0], schedule.alpha_bar))[t]  # t=0 -> 1
    sq = np.sqrt(abar)[:, None, None, None]
    sq1m = np.sqrt(1.0 - abar)[:, None, None, None]
    xt = (sq * x0 + sq1m * eps).astype(dt)
    pred, cache = model.forward(xt, t, cond)
    diff = pred - eps.astype(dt)
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    g_out = (2.0 / diff.size) * diff
    grads = model.backward(cache, g_out.astype(dt))
    return loss, grads


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for k, p in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        mhat = state.m[k] / bc1
        vhat = state.v[k] / bc2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def train_step(
    model: Denoiser,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    cond: np.ndarray,
    rng: np.random.Generator,
    opt: AdamState,
    lr: float,
) -> float:
    """One update: sample t and eps, evaluate the objective, apply Adam.

    x0 is (B,1,S,S) float64 in [0,1]; cond is (B,cond_rows). Returns the loss.
    """
    if x0.shape[0] < 1:
        raise ValueError("empty batch")
    b = x0.shape[0]
    t = rng.integers(1, schedule.t_train + 1, size=b)
    eps = rng.standard_normal(x0.shape)
    loss, grads = loss_and_grads(model, schedule, x0, cond, t, eps)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r}")
    adam_update(model.params, grads, opt, lr)
    return loss
