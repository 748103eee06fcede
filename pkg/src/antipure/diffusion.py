"""DDPM noise schedule and the closed-form diffusion algebra.

Timesteps are 1-based: t runs over 1..T, with alpha_bar(0) defined as 1.
All stochastic entry points take explicit seeds; nothing touches global RNG.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, as_tensor, mul, reduce_mean, sub


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep variance table: beta[t-1] is the variance at step t."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal retention; alpha_bar(0) == 1 by convention."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def check_t(self, t: int):
        if not (isinstance(t, (int, np.integer)) and 1 <= t <= self.T):
            raise ValueError(f"timestep {t} outside schedule range [1, {self.T}]")


def make_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta ramp with alpha_bar as the running product of (1 - beta)."""
    if not (isinstance(T, (int, np.integer)) and T >= 2):
        raise ValueError(f"need T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T=int(T), beta=beta, alpha_bar=alpha_bar)


def diffuse(x0, t: int, eps, sched: NoiseSchedule) -> Tensor:
    """Forward diffusion: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    sched.check_t(t)
    x0, eps = as_tensor(x0), as_tensor(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"diffuse: shape mismatch {x0.shape} vs {eps.shape}")
    ab = sched.alpha_bar_at(t)
    return add(mul(x0, np.sqrt(ab)), mul(eps, np.sqrt(1.0 - ab)))


def predict_x0(x_t, eps_pred, t: int, sched: NoiseSchedule) -> Tensor:
    """One-step clean-image estimate: (x_t - sqrt(1 - ab_t) * eps_pred) / sqrt(ab_t)."""
    sched.check_t(t)
    x_t, eps_pred = as_tensor(x_t), as_tensor(eps_pred)
    if x_t.shape != eps_pred.shape:
        raise ValueError(f"predict_x0: shape mismatch {x_t.shape} vs {eps_pred.shape}")
    ab = sched.alpha_bar_at(t)
    return mul(sub(x_t, mul(eps_pred, np.sqrt(1.0 - ab))), 1.0 / np.sqrt(ab))


def ddpm_loss(model, x0, t: int, eps, sched: NoiseSchedule) -> Tensor:
    """Mean squared error between the injected noise and the model's prediction.

    The caller owns the (t, eps) sample, which keeps every Monte Carlo choice
    explicit and lets tests hold the noise fixed.
    """
    x_t = diffuse(x0, t, eps, sched)
    d = sub(as_tensor(eps), model.predict(x_t, t))
    return reduce_mean(mul(d, d))


def reverse(x_t, t_from: int, t_to: int, model, sched: NoiseSchedule, rng_seed) -> np.ndarray:
    """Ancestral DDPM sampling from t_from down to t_to.

    Fresh Gaussian noise (fixed beta_t posterior variance) is injected at every
    step except the last; the result is a pure function of (inputs, rng_seed).
    """
    if not (t_from > t_to >= 0):
        raise ValueError(f"need t_from > t_to >= 0, got {t_from}, {t_to}")
    sched.check_t(t_from)
    x = np.array(x_t.data if isinstance(x_t, Tensor) else x_t, dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    for t in range(t_from, t_to, -1):
        eps_hat = model.predict(x, t).data
        b_t = sched.beta_at(t)
        ab_t = sched.alpha_bar_at(t)
        mean = (x - b_t / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(1.0 - b_t)
        if t > t_to + 1:
            x = mean + np.sqrt(b_t) * rng.standard_normal(x.shape)
        else:
            x = mean
    return x
