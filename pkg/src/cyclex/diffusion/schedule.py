"""Noise schedule and the forward corruption process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T_TRAIN = 200
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.05
DEFAULT_DDIM_STEPS = 25


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta/alpha tables; step t runs 1..t_train, t=0 is clean."""

    t_train: int
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha product at step t, with the empty product at t=0."""
        if not 0 <= t <= self.t_train:
            raise ValueError(f"t={t} outside [0, {self.t_train}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


@dataclass(frozen=True)
class NoisyState:
    """A (possibly batched) image-shaped tensor at diffusion step t."""

    x: np.ndarray
    t: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite values in noisy state")


def make_schedule(
    t_train: int = DEFAULT_T_TRAIN,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if t_train < 1:
        raise ValueError(f"t_train must be >= 1, got {t_train}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(t_train=t_train, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_diffuse(
    schedule: NoiseSchedule, x0: np.ndarray, t: int, epsilon: np.ndarray
) -> NoisyState:
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    if epsilon.shape != x0.shape:
        raise ValueError(f"epsilon shape {epsilon.shape} != x0 shape {x0.shape}")
    abar = schedule.alpha_bar_at(t)
    xt = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * epsilon
    return NoisyState(x=xt, t=t)


def strided_times(t_train: int, n_steps: int) -> list[int]:
    """Descending DDIM timestep subsequence, n_steps points ending at t_train.

    Uniform spacing: tau_i = round(i * T / n) for i = n..1. The implicit final
    target of the last reverse step is t=0.
    """
    if not 1 <= n_steps <= t_train:
        raise ValueError(f"n_steps must be in [1, {t_train}], got {n_steps}")
    taus = sorted({max(1, round(i * t_train / n_steps)) for i in range(1, n_steps + 1)})
    return list(reversed(taus))
