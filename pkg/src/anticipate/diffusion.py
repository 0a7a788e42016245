"""Variance-preserving feature perturbation with a learned residual denoiser.

A feature vector is noised to a randomly chosen step of a linear beta
schedule, passed through a two-layer ReLU network, and the network output is
added back onto the original feature with a small coefficient ``lam``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_BETA_START = 0.001
DEFAULT_BETA_END = 0.02
DEFAULT_LAMBDA = 0.15


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_start: float
    beta_end: float

    @property
    def steps(self) -> int:
        return len(self.betas)

    @property
    def eval_step(self) -> int:
        return self.steps // 2


def build_schedule(steps: int = 10, beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> DiffusionSchedule:
    if steps < 1:
        raise ConfigError("diffusion needs at least one step")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    t = np.arange(steps)
    betas = beta_start + (t / steps) * (beta_end - beta_start)
    return schedule_from_betas(betas, beta_start, beta_end)


def schedule_from_betas(betas, beta_start=None, beta_end=None) -> DiffusionSchedule:
    """Schedule from explicit betas; zero or unit betas are allowed here for testing."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0 or np.any(betas < 0) or np.any(betas > 1):
        raise ConfigError("betas must be a non-empty 1-d array in [0, 1]")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return DiffusionSchedule(
        betas, alphas, alpha_bars,
        float(betas[0]) if beta_start is None else beta_start,
        float(betas[-1]) if beta_end is None else beta_end,
    )


def sample_timestep(rng: np.random.Generator, steps: int) -> int:
    return int(rng.integers(steps))


def _expand(values: np.ndarray, t, ndim: int) -> np.ndarray:
    v = values[np.asarray(t)]
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def forward_diffuse(F, t, schedule: DiffusionSchedule, noise) -> np.ndarray:
    """``sqrt(abar_t) F + sqrt(1 - abar_t) noise``; ``t`` may be an array over leading axes."""
    F = np.asarray(F, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if F.shape != noise.shape:
        raise ShapeError(f"feature shape {F.shape} != noise shape {noise.shape}")
    if np.any(np.asarray(t) >= schedule.steps) or np.any(np.asarray(t) < 0):
        raise ShapeError(f"diffusion step out of range [0, {schedule.steps})")
    ab = _expand(schedule.alpha_bars, t, F.ndim)
    return np.sqrt(ab) * F + np.sqrt(1.0 - ab) * noise


def init_denoiser(rng: np.random.Generator, d: int, steps: int = 0) -> dict:
    b = 1.0 / np.sqrt(d)
    p = {
        "W1": rng.uniform(-b, b, (d, d)),
        "b1": rng.uniform(-b, b, d),
        "W2": rng.uniform(-b, b, (d, d)),
        "b2": rng.uniform(-b, b, d),
    }
    if steps:
        p["emb"] = rng.normal(0.0, 0.1, (steps, d))
    return p


def denoise_forward(F_noisy, t, params):
    F_noisy = np.asarray(F_noisy, dtype=np.float64)
    d = params["W1"].shape[1]
    if F_noisy.shape[-1] != d:
        raise ShapeError(f"denoiser expects dimension {d}, got {F_noisy.shape[-1]}")
    a1 = F_noisy @ params["W1"].T + params["b1"]
    if "emb" in params:
        a1 = a1 + params["emb"][np.asarray(t)].reshape(np.shape(t) + (1,) * (a1.ndim - 1 - np.ndim(t)) + (d,))
    r1 = np.maximum(a1, 0.0)
    out = r1 @ params["W2"].T + params["b2"]
    return out, (F_noisy, a1, r1, t)


def denoise(F_noisy, t, params) -> np.ndarray:
    return denoise_forward(F_noisy, t, params)[0]


def denoise_backward(dout, cache, params):
    F_noisy, a1, r1, t = cache
    lead = tuple(range(dout.ndim - 1))
    da1 = (dout @ params["W2"]) * (a1 > 0)
    grads = {
        "W2": np.tensordot(dout, r1, axes=(lead, lead)),
        "b2": dout.sum(axis=lead),
        "W1": np.tensordot(da1, F_noisy, axes=(lead, lead)),
        "b1": da1.sum(axis=lead),
    }
    if "emb" in params:
        g = np.zeros_like(params["emb"])
        t_arr = np.asarray(t)
        # sum the trailing batch axes that share one step
        per = da1.reshape(t_arr.shape + (-1, da1.shape[-1])).sum(axis=-2) if da1.ndim - 1 > t_arr.ndim else da1
        np.add.at(g, t_arr, per)
        grads["emb"] = g
    dF_noisy = da1 @ params["W1"]
    return dF_noisy, grads


def enhance_forward(F, t, noise, schedule, params, lam=DEFAULT_LAMBDA):
    noisy = forward_diffuse(F, t, schedule, noise)
    d, dcache = denoise_forward(noisy, t, params)
    return F + lam * d, (dcache, t, lam, d)


def enhance_backward(dout, cache, schedule, params):
    """Return ``(dF, grads)``; the injected noise is held fixed."""
    dcache, t, lam, _ = cache
    dnoisy, grads = denoise_backward(lam * dout, dcache, params)
    ab = _expand(schedule.alpha_bars, t, dout.ndim)
    return dout + np.sqrt(ab) * dnoisy, grads


def enhance(F, t, schedule, params, lam=DEFAULT_LAMBDA, rng=None, noise=None) -> np.ndarray:
    """Residual fusion ``F + lam * denoise(forward_diffuse(F, t, noise), t)``.

    ``noise`` is drawn from ``rng`` when not given.
    """
    if lam < 0:
        raise ConfigError("fusion coefficient must be >= 0")
    F = np.asarray(F, dtype=np.float64)
    if noise is None:
        noise = rng.standard_normal(F.shape)
    return enhance_forward(F, t, noise, schedule, params, lam)[0]
