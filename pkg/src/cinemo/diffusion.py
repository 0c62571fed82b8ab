"""Noise schedule, forward process, deterministic DDIM steps and inversion,
classifier-free guidance, and sinusoidal conditioning embeddings.

All operations are pure; noise tensors are always supplied by the caller so
randomness lives only at the CLI boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2

DEFAULT_GUIDANCE_SCALE = 7.5
DEFAULT_SAMPLER_STEPS = 50


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule tables. alpha_bars has T+1 entries with
    alpha_bars[0] = 1 so t = 0 means 'clean'."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> np.ndarray:
        return self.alpha_bars[t]


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return NoiseSchedule(betas, alphas, alpha_bars)


def _check_t(t, T: int) -> None:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > T):
        raise ValueError(f"diffusion step {t} outside [1, {T}]")


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward process: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    `t` may be a scalar or a per-sample array matching x0's leading axis.
    """
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    _check_t(t, sched.T)
    ab = sched.alpha_bar(np.asarray(t))
    if ab.ndim > 0:  # per-sample t: broadcast over trailing axes
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    dt = x0.dtype if x0.dtype.kind == "f" else np.float64
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(dt)


def ddim_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              sched: NoiseSchedule) -> np.ndarray:
    """One deterministic DDIM update from step t down to t_prev (eta = 0)."""
    if t_prev > t:
        raise ValueError(f"ddim_step needs t >= t_prev, got {t} -> {t_prev}")
    _check_t(t, sched.T)
    if t_prev < 0:
        raise ValueError("t_prev must be >= 0")
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return (np.sqrt(ab_p) * x0_hat + np.sqrt(1.0 - ab_p) * eps_hat).astype(x_t.dtype)


def ddim_invert_step(x_prev: np.ndarray, eps_hat: np.ndarray, t_prev: int, t: int,
                     sched: NoiseSchedule) -> np.ndarray:
    """Exact algebraic inverse of ddim_step under the same eps_hat."""
    if t <= t_prev and t != t_prev:
        raise ValueError(f"inversion needs t > t_prev, got {t_prev} -> {t}")
    _check_t(t, sched.T)
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    x0_hat = (x_prev - np.sqrt(1.0 - ab_p) * eps_hat) / np.sqrt(ab_p)
    return (np.sqrt(ab_t) * x0_hat + np.sqrt(1.0 - ab_t) * eps_hat).astype(x_prev.dtype)


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: eps_u + w * (eps_c - eps_u).

    w = 0 and w = 1 return their input exactly (no floating-point residue),
    which also licenses skipping the unused forward pass at those scales.
    """
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(f"shape mismatch {eps_uncond.shape} vs {eps_cond.shape}")
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def sampling_timesteps(T: int, n_steps: int) -> list[tuple[int, int]]:
    """Descending (t, t_prev) pairs: uniform stride from T with a final step to 0."""
    if not (1 <= n_steps <= T):
        raise ValueError(f"need 1 <= n_steps <= T, got {n_steps} (T={T})")
    stride = T // n_steps
    ts = [T - i * stride for i in range(n_steps)]
    return [(ts[i], ts[i + 1] if i + 1 < n_steps else 0) for i in range(n_steps)]


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding with interleaved sin/cos and wavelengths spanning
    a geometric range up to 1e4. `t` scalar -> (dim,); array -> (..., dim)."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-np.log(1e4) * np.arange(half) / (half - 1))
    t = np.asarray(t, dtype=np.float64)
    angles = t[..., None] * freqs
    out = np.empty(t.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def bucket_embedding(b, dim: int) -> np.ndarray:
    """Same sinusoidal family applied to the motion bucket index."""
    b_arr = np.asarray(b)
    if np.any(b_arr < 0) or np.any(b_arr > 19):
        raise ValueError(f"motion bucket {b} outside [0, 19]")
    return timestep_embedding(b_arr, dim)


@dataclass
class SamplerConfig:
    n_steps: int = DEFAULT_SAMPLER_STEPS
    eta: float = 0.0

    def validate(self, T: int) -> None:
        if self.eta != 0.0:
            raise ValueError("only deterministic DDIM (eta = 0) is supported")
        if not (1 <= self.n_steps <= T):
            raise ValueError(f"n_steps {self.n_steps} outside [1, {T}]")


@dataclass
class GuidanceConfig:
    scale: float = DEFAULT_GUIDANCE_SCALE
    null_class_id: int = 4

    def validate(self) -> None:
        if self.scale < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale}")
