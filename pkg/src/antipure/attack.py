"""Guided PGD perturbations against the purification denoiser.

The objective combines three terms, each evaluated at one Monte Carlo sample
of (t, eps) per PGD step with t drawn uniformly from 1..t_p:

  * the plain noise-prediction loss,
  * frequency guidance: pushes the model's one-step clean-image prediction
    toward higher patchwise high-frequency energy, weighted by
    lambda1 * exp(alpha_bar(t) - 1) so low timesteps count more,
  * erroneous-timestep guidance: shrinks the gap between the noise predicted
    at the true timestep and at a fixed wrong one, entering the total as
    lambda2 * exp(gap_loss).

Each step ascends the sign of the gradient and projects the perturbation onto
the eta-ball and the valid image range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dct import dct2d
from .diffusion import NoiseSchedule, diffuse, predict_x0
from .tensor import (GradientTape, Tensor, add, as_tensor, backward, exp, mul,
                     neg, reduce_mean, reduce_sum, reshape, sigmoid, sub,
                     transpose)

LOSS_TERMS = ("ddpm", "fre", "err_t")


@dataclass(frozen=True)
class AttackConfig:
    eta: float = 16.0 / 255.0
    alpha: float = 5e-3
    steps: int = 100
    lambda1: float = 0.5
    lambda2: float = 0.5
    t_err: int = 99
    t_p: int = 10
    patch_size: int = 8
    losses: tuple[str, ...] = LOSS_TERMS
    seed: int = 0
    frozen_noise: bool = False  # test-only: one (t, eps) reused across steps

    def __post_init__(self):
        if self.eta <= 0 or self.alpha <= 0:
            raise ValueError("eta and alpha must be positive")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.t_p < 1 or self.t_err < 1:
            raise ValueError("t_p and t_err must be >= 1")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError(f"patch_size must be even and >= 2, got {self.patch_size}")
        bad = set(self.losses) - set(LOSS_TERMS)
        if bad or not self.losses:
            raise ValueError(f"losses must be a non-empty subset of {LOSS_TERMS}, got {self.losses}")
        object.__setattr__(self, "losses", tuple(t for t in LOSS_TERMS if t in self.losses))


@dataclass(frozen=True)
class StepRecord:
    t: int
    l_ddpm: float       # nan when the term is masked
    l_fre: float
    l_err_t: float
    l_total: float
    delta_linf: float


@dataclass
class AttackTrace:
    records: list[StepRecord] = field(default_factory=list)


def loss_fre(x0_hat, s: int) -> Tensor:
    """Sigmoid-squashed mean of each patch's bottom-right-quarter DCT mass.

    The image splits into non-overlapping s x s patches per channel; the
    coefficients with both indices in [s/2, s) are summed, scaled by 4/s^2,
    averaged over patches and channels, and squashed into (0, 1).
    """
    x0_hat = as_tensor(x0_hat)
    if len(x0_hat.shape) != 3:
        raise ValueError(f"loss_fre: expected (C, H, W), got {x0_hat.shape}")
    c, h, w = x0_hat.shape
    if s < 2 or s % 2:
        raise ValueError(f"loss_fre: patch side must be even and >= 2, got {s}")
    if h % s or w % s:
        raise ValueError(f"loss_fre: patch side {s} does not divide image dims {(h, w)}")
    nh, nw = h // s, w // s
    patches = transpose(reshape(x0_hat, (c, nh, s, nw, s)), (0, 1, 3, 2, 4))
    coefs = dct2d(patches)
    hf_mask = np.zeros((s, s))
    hf_mask[s // 2:, s // 2:] = 1.0
    total = reduce_sum(mul(coefs, hf_mask))
    return sigmoid(mul(total, 4.0 / (s * s) / (c * nh * nw)))


def loss_err_t(model, x_t, t: int, t_err: int, sched: NoiseSchedule) -> Tensor:
    """Negated mean squared gap between predictions at t_err and t; always <= 0."""
    sched.check_t(t)
    sched.check_t(t_err)
    d = sub(model.predict(x_t, t_err), model.predict(x_t, t))
    return neg(reduce_mean(mul(d, d)))


def loss_pgd(model, x0, delta, t: int, eps, cfg: AttackConfig,
             sched: NoiseSchedule) -> tuple[Tensor, dict[str, float]]:
    """Combined attack objective at one (t, eps) sample, plus component values.

    Component values in the returned dict are the raw (unweighted) losses;
    masked terms report nan.
    """
    if t > cfg.t_p:
        raise ValueError(f"attack timestep {t} exceeds t_p {cfg.t_p}")
    x_t = diffuse(add(as_tensor(x0), as_tensor(delta)), t, eps, sched)
    eps_pred = model.predict(x_t, t)

    comps = {term: math.nan for term in LOSS_TERMS}
    terms = []
    if "ddpm" in cfg.losses:
        d = sub(as_tensor(eps), eps_pred)
        l_ddpm = reduce_mean(mul(d, d))
        comps["ddpm"] = l_ddpm.item()
        terms.append(l_ddpm)
    if "fre" in cfg.losses:
        l_fre = loss_fre(predict_x0(x_t, eps_pred, t, sched), cfg.patch_size)
        comps["fre"] = l_fre.item()
        terms.append(mul(l_fre, cfg.lambda1 * math.exp(sched.alpha_bar_at(t) - 1.0)))
    if "err_t" in cfg.losses:
        l_err = loss_err_t(model, x_t, t, cfg.t_err, sched)
        comps["err_t"] = l_err.item()
        terms.append(mul(exp(l_err), cfg.lambda2))
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total, comps


def pgd_attack(x0, model, cfg: AttackConfig, sched: NoiseSchedule) -> tuple[np.ndarray, AttackTrace]:
    """Sign-gradient ascent on the attack objective with per-step projection.

    Every iterate satisfies |delta|_inf <= eta and x0 + delta in [-1, 1];
    the whole run is a pure function of (x0, model, cfg, sched).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if np.max(np.abs(x0)) > 1.0 + 1e-12:
        raise ValueError("x0 must lie in [-1, 1]")
    rng = np.random.default_rng([0xAD5, cfg.seed])
    trace = AttackTrace()
    delta = np.zeros_like(x0)
    frozen = None
    if cfg.frozen_noise:
        frozen = (int(rng.integers(1, cfg.t_p + 1)), rng.standard_normal(x0.shape))
    for _ in range(cfg.steps):
        if frozen is not None:
            t, eps = frozen
        else:
            t = int(rng.integers(1, cfg.t_p + 1))
            eps = rng.standard_normal(x0.shape)
        tape = GradientTape()
        leaf = tape.watch(Tensor(delta))
        total, comps = loss_pgd(model, x0, leaf, t, eps, cfg, sched)
        g = backward(total, tape, leaf).data
        delta = np.clip(delta + cfg.alpha * np.sign(g), -cfg.eta, cfg.eta)
        delta = np.clip(x0 + delta, -1.0, 1.0) - x0
        trace.records.append(StepRecord(
            t=t, l_ddpm=comps["ddpm"], l_fre=comps["fre"], l_err_t=comps["err_t"],
            l_total=total.item(), delta_linf=float(np.max(np.abs(delta)))))
    return x0 + delta, trace


ARM_LOSSES: dict[str, tuple[str, ...] | None] = {
    "none": None,
    "pgd_ddpm": ("ddpm",),
    "pgd_ddpm+fre": ("ddpm", "fre"),
    "pgd_ddpm+err_t": ("ddpm", "err_t"),
    "antipure": ("ddpm", "fre", "err_t"),
}


def perturb_arm(arm: str, x0, model, cfg: AttackConfig,
                sched: NoiseSchedule) -> tuple[np.ndarray, AttackTrace]:
    """Apply one named perturbation arm; `none` is the identity."""
    if arm not in ARM_LOSSES:
        raise ValueError(f"unknown arm {arm!r}; expected one of {sorted(ARM_LOSSES)}")
    losses = ARM_LOSSES[arm]
    if losses is None:
        return np.array(x0, dtype=np.float64), AttackTrace()
    return pgd_attack(x0, model, replace(cfg, losses=losses), sched)
