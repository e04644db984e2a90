"""Denoising-diffusion machinery shared by every generative stage.

Conventions: timesteps run t = 0..T with alpha_bar[0] = 1 (no noise);
beta[t-1] is the step-t variance. The denoiser predicts the clean signal
directly, and the reverse process forms the standard posterior from that
prediction. A per-step guidance corrector, when given, edits the decoded
clean estimate before the posterior is formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_STEPS = 100
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


class DivergenceError(RuntimeError):
    """Non-finite state during sampling; carries the offending step."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at reverse step {step}")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances beta_t and cumulative products alpha_bar_t."""

    beta: np.ndarray       # (T,), beta[t-1] is the variance of step t
    alpha_bar: np.ndarray  # (T+1,), alpha_bar[0] == 1

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a nonempty 1-D array")
        if not ((beta > 0.0) & (beta < 1.0)).all():
            raise ValueError("every beta must lie in (0, 1)")
        if ab.shape != (beta.size + 1,) or ab[0] != 1.0:
            raise ValueError("alpha_bar must have length T+1 and start at 1")
        if not (np.diff(ab) < 0.0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return self.beta.size

    @staticmethod
    def linear(steps: int = DEFAULT_STEPS, beta_start: float = DEFAULT_BETA_START,
               beta_end: float = DEFAULT_BETA_END) -> "NoiseSchedule":
        beta = np.linspace(beta_start, beta_end, steps)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
        return NoiseSchedule(beta, alpha_bar)


def _check_t(t: int, lo: int, hi: int):
    if not (lo <= t <= hi):
        raise ValueError(f"timestep {t} outside [{lo}, {hi}]")


def forward_sample(a0: np.ndarray, t: int, eps: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    """Closed-form jump to step t: sqrt(ab_t)*a0 + sqrt(1-ab_t)*eps."""
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != a0.shape:
        raise ValueError(f"noise shape {eps.shape} != signal shape {a0.shape}")
    _check_t(t, 0, sched.steps)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def forward_step(a_prev: np.ndarray, t: int, eps: np.ndarray,
                 sched: NoiseSchedule) -> np.ndarray:
    """Single noising step t-1 -> t: sqrt(1-beta_t)*a + sqrt(beta_t)*eps."""
    a_prev = np.asarray(a_prev, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != a_prev.shape:
        raise ValueError(f"noise shape {eps.shape} != signal shape {a_prev.shape}")
    _check_t(t, 1, sched.steps)
    beta = sched.beta[t - 1]
    return np.sqrt(1.0 - beta) * a_prev + np.sqrt(beta) * eps


def diffusion_loss(a0: np.ndarray, a0_hat: np.ndarray) -> float:
    a0 = np.asarray(a0, dtype=np.float64)
    a0_hat = np.asarray(a0_hat, dtype=np.float64)
    if a0.shape != a0_hat.shape:
        raise ValueError(f"shape mismatch {a0.shape} vs {a0_hat.shape}")
    return float(np.mean((a0 - a0_hat) ** 2))


def posterior_step(a_t: np.ndarray, a0_hat: np.ndarray, t: int,
                   sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One reverse transition t -> t-1 given the clean estimate.

    At t == 1 the posterior collapses to the estimate itself (alpha_bar[0]
    is 1), so the estimate is returned exactly.
    """
    _check_t(t, 1, sched.steps)
    if t == 1:
        return np.array(a0_hat, dtype=np.float64, copy=True)
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    beta_t = sched.beta[t - 1]
    alpha_t = 1.0 - beta_t
    coef0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_t = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    mean = coef0 * a0_hat + coef_t * a_t
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def reverse_denoise(a_start: np.ndarray, denoiser, cond, sched: NoiseSchedule,
                    rng: np.random.Generator, guidance=None,
                    t_start: int | None = None) -> np.ndarray:
    """Run the reverse chain from t_start (default T) down to the clean signal.

    denoiser(a_t, t, cond) -> clean estimate; guidance(a0_hat, t) -> edited
    estimate, applied to the decoded state after every denoiser call.
    """
    a = np.array(a_start, dtype=np.float64, copy=True)
    t_start = sched.steps if t_start is None else t_start
    _check_t(t_start, 0, sched.steps)
    a0_hat = a
    for t in range(t_start, 0, -1):
        a0_hat = np.asarray(denoiser(a, t, cond), dtype=np.float64)
        if a0_hat.shape != a.shape:
            raise ValueError(f"denoiser changed shape {a.shape} -> {a0_hat.shape}")
        if not np.isfinite(a0_hat).all():
            raise DivergenceError("denoiser produced non-finite estimate", t)
        if guidance is not None:
            a0_hat = np.asarray(guidance(a0_hat, t), dtype=np.float64)
            if not np.isfinite(a0_hat).all():
                raise DivergenceError("guidance produced non-finite estimate", t)
        a = posterior_step(a, a0_hat, t, sched, rng)
        if not np.isfinite(a).all():
            raise DivergenceError("posterior state became non-finite", t)
    return a


def inpaint(signal: np.ndarray, observed: np.ndarray, t_noise: int, denoiser,
            cond, sched: NoiseSchedule, rng: np.random.Generator,
            guidance=None) -> np.ndarray:
    """Regenerate the unobserved entries by noise-then-denoise.

    observed is a boolean mask over the signal; True entries are clamped to
    the forward-noised original after every reverse step and returned
    bit-exact. t_noise = 0 is the identity.
    """
    signal = np.asarray(signal, dtype=np.float64)
    observed = np.broadcast_to(np.asarray(observed, dtype=bool), signal.shape)
    _check_t(t_noise, 0, sched.steps)
    if observed.all():
        warnings.warn("inpaint called with an all-observed mask; returning input")
        return signal.copy()
    if not observed.any():
        raise ValueError("inpaint needs at least one observed entry")
    if t_noise == 0:
        return signal.copy()

    a = forward_sample(signal, t_noise, rng.standard_normal(signal.shape), sched)
    for t in range(t_noise, 0, -1):
        a0_hat = np.asarray(denoiser(a, t, cond), dtype=np.float64)
        if not np.isfinite(a0_hat).all():
            raise DivergenceError("denoiser produced non-finite estimate", t)
        if guidance is not None:
            a0_hat = np.asarray(guidance(a0_hat, t), dtype=np.float64)
        a = posterior_step(a, a0_hat, t, sched, rng)
        if not np.isfinite(a).all():
            raise DivergenceError("posterior state became non-finite", t)
        ref = forward_sample(signal, t - 1, rng.standard_normal(signal.shape), sched)
        a = np.where(observed, ref, a)
    return np.where(observed, signal, a)
