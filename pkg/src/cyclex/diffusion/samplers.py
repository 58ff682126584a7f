"""Reverse-process steppers: stochastic stepping, its deterministic sigma=0
specialization, inversion, and full-trajectory sampling.

All functions take any object with ``predict(x, t, cond) -> eps`` (the
trained denoiser or an analytic stand-in) and operate on float64 states of
shape (H, W) or (B, H, W); batched states share one timestep.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule, NoisyState, strided_times


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"state must be (H,W) or (B,H,W), got shape {x.shape}")


def ddpm_sigma(schedule: NoiseSchedule, t_hi: int, t_lo: int, eta: float = 1.0) -> float:
    """Standard stochasticity level for the step t_hi -> t_lo, scaled by eta."""
    a_hi = schedule.alpha_bar_at(t_hi)
    a_lo = schedule.alpha_bar_at(t_lo)
    return float(eta * np.sqrt((1 - a_lo) / (1 - a_hi)) * np.sqrt(1 - a_hi / a_lo))


def ddpm_step(
    model,
    schedule: NoiseSchedule,
    state: NoisyState,
    cond: np.ndarray,
    sigma_t: float,
    rng: np.random.Generator | None = None,
    t_next: int | None = None,
) -> NoisyState:
    """One reverse step t -> t_next (default t-1):

        x_lo = sqrt(abar_lo) * (x - sqrt(1-abar_hi) * eps_hat) / sqrt(abar_hi)
             + sqrt(1 - abar_lo - sigma^2) * eps_hat + sigma * noise

    With sigma_t = 0 the noise term vanishes and no rng draw is consumed.
    """
    t_hi = state.t
    if t_hi < 1:
        raise ValueError("no reverse step from t=0")
    t_lo = t_hi - 1 if t_next is None else t_next
    if not 0 <= t_lo < t_hi:
        raise ValueError(f"invalid step {t_hi} -> {t_lo}")
    a_hi = schedule.alpha_bar_at(t_hi)
    a_lo = schedule.alpha_bar_at(t_lo)
    if sigma_t < 0 or sigma_t**2 > 1.0 - a_lo + 1e-15:
        raise ValueError(f"sigma_t={sigma_t} outside [0, sqrt(1-abar_lo)]")
    x, squeeze = _as_batch(state.x)
    eps_hat = model.predict(x, t_hi, cond)
    pred_x0 = (x - np.sqrt(1.0 - a_hi) * eps_hat) / np.sqrt(a_hi)
    x_lo = np.sqrt(a_lo) * pred_x0 + np.sqrt(max(1.0 - a_lo - sigma_t**2, 0.0)) * eps_hat
    if sigma_t > 0.0:
        if rng is None:
            raise ValueError("sigma_t > 0 requires an rng")
        x_lo = x_lo + sigma_t * rng.standard_normal(x.shape)
    return NoisyState(x=x_lo[0] if squeeze else x_lo, t=t_lo)


def ddim_step(
    model,
    schedule: NoiseSchedule,
    state: NoisyState,
    cond: np.ndarray,
    t_next: int | None = None,
) -> NoisyState:
    """The deterministic sigma=0 path of ddpm_step."""
    return ddpm_step(model, schedule, state, cond, sigma_t=0.0, t_next=t_next)


def _invert_update(x, eps_hat, a_lo: float, a_hi: float):
    # solve the sigma=0 step for the higher-noise state given eps_hat
    return (
        np.sqrt(a_hi) * (x - np.sqrt(1.0 - a_lo) * eps_hat) / np.sqrt(a_lo)
        + np.sqrt(1.0 - a_hi) * eps_hat
    )


def ddim_invert_step(
    model,
    schedule: NoiseSchedule,
    state: NoisyState,
    cond: np.ndarray,
    t_next: int,
    n_iter: int = 8,
    tol: float = 1e-12,
) -> NoisyState:
    """Exact algebraic inverse of ddim_step for t -> t_next (t_next > t).

    The inverse is implicit because the forward step evaluates the model at
    its own input; a fixed-point iteration makes the prediction
    state-consistent, so ddim_step(ddim_invert_step(x)) returns x up to the
    iteration tolerance.
    """
    t_lo = state.t
    if not t_lo < t_next <= schedule.t_train:
        raise ValueError(f"invalid inversion {t_lo} -> {t_next}")
    a_hi = schedule.alpha_bar_at(t_next)
    a_lo = schedule.alpha_bar_at(t_lo)
    x, squeeze = _as_batch(state.x)
    y = x
    for _ in range(n_iter):
        y_new = _invert_update(x, model.predict(y, t_next, cond), a_lo, a_hi)
        delta = float(np.max(np.abs(y_new - y)))
        y = y_new
        if delta <= tol * max(1.0, float(np.max(np.abs(y)))):
            break
    return NoisyState(x=y[0] if squeeze else y, t=t_next)


def ddim_invert(
    model,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    cond: np.ndarray,
    n_steps: int,
) -> NoisyState:
    """Reverse-time DDIM update from a clean image to the terminal latent.

    Each hop evaluates the model once at the current state and the target
    timestep, so resampling the returned latent reproduces x0 only
    approximately; the residual is what reconstruction PSNR measures.
    """
    taus = strided_times(schedule.t_train, n_steps)
    x, squeeze = _as_batch(np.asarray(x0, dtype=np.float64))
    t_lo = 0
    for t_hi in reversed(taus):
        a_hi = schedule.alpha_bar_at(t_hi)
        a_lo = schedule.alpha_bar_at(t_lo)
        eps_hat = model.predict(x, t_hi, cond)
        x = _invert_update(x, eps_hat, a_lo, a_hi)
        t_lo = t_hi
    return NoisyState(x=x[0] if squeeze else x, t=taus[0])


def sample(
    model,
    schedule: NoiseSchedule,
    terminal: NoisyState,
    cond: np.ndarray,
    n_steps: int,
) -> np.ndarray:
    """Iterated deterministic stepping from the terminal latent to an image."""
    taus = strided_times(schedule.t_train, n_steps)
    if terminal.t != taus[0]:
        raise ValueError(f"terminal.t={terminal.t}, strided start is {taus[0]}")
    state = terminal
    for t_next in taus[1:] + [0]:
        state = ddim_step(model, schedule, state, cond, t_next=t_next)
    return np.clip(state.x, 0.0, 1.0)


def reconstruct(
    model,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    cond: np.ndarray,
    n_steps: int,
) -> np.ndarray:
    """Invert then resample under the same conditioning."""
    return sample(model, schedule, ddim_invert(model, schedule, x0, cond, n_steps), cond, n_steps)
