"""Inference-time noise refinement in the frequency domain.

The initial residual noise is rebuilt by donating the low-frequency band of
the tau-step-noised first-frame latent and keeping the high band of fresh
noise: eps' = IDCT(DCT(z1_tau) * H + DCT(eps) * (1 - H)). The DCT variant is
the default; an FFT variant with the same masks exists for A/B comparison
(it assumes periodic signals, so non-periodic content leaks across bands).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .diffusion import NoiseSchedule, q_sample

# 3D transforms act on (time, height, width); channels stay untouched.
_AXES = (-4, -2, -1)


def dct3(x: np.ndarray) -> np.ndarray:
    """Orthonormal separable DCT-II over (time, height, width) of (..., N, c, h, w)."""
    return sfft.dctn(x, type=2, axes=_AXES, norm="ortho")


def idct3(coeffs: np.ndarray) -> np.ndarray:
    """Inverse (orthonormal DCT-III) of dct3."""
    return sfft.idctn(coeffs, type=2, axes=_AXES, norm="ortho")


def fft3(x: np.ndarray) -> np.ndarray:
    """Orthonormal complex FFT over the same axes."""
    return np.fft.fftn(x, axes=_AXES, norm="ortho")


def ifft3(coeffs: np.ndarray) -> np.ndarray:
    """Inverse FFT; returns the real part (blend masks keep spectra Hermitian)."""
    return np.fft.ifftn(coeffs, axes=_AXES, norm="ortho").real


@dataclass
class FrequencyFilter:
    """Low-pass mask over (time, height, width) frequency bins."""

    mask: np.ndarray
    kind: str
    cutoffs: tuple[float, float]  # (temporal, spatial), normalized to (0, 1]


def _axis_weights(length: int, freq_mode: str) -> np.ndarray:
    """Per-bin frequency index; FFT bins fold symmetrically and are doubled
    so a cutoff selects the same physical band as for the DCT."""
    idx = np.arange(length, dtype=np.float64)
    if freq_mode == "fft":
        return 2.0 * np.minimum(idx, length - idx)
    return idx


def make_lowpass(shape: tuple[int, int, int], kind: str = "ideal",
                 cutoff_t: float = 0.25, cutoff_s: float = 0.25,
                 freq_mode: str = "dct") -> FrequencyFilter:
    """Build a separable low-pass mask for coefficient tensors of
    (n_time, height, width) frequency layout."""
    if not (0.0 < cutoff_t <= 1.0 and 0.0 < cutoff_s <= 1.0):
        raise ValueError(f"cutoffs must be in (0, 1], got {(cutoff_t, cutoff_s)}")
    if kind not in ("ideal", "gaussian"):
        raise ValueError(f"unknown filter kind {kind!r}")
    if freq_mode not in ("dct", "fft"):
        raise ValueError(f"unknown freq mode {freq_mode!r}")
    nt, h, w = shape
    axes = []
    for length, rho in ((nt, cutoff_t), (h, cutoff_s), (w, cutoff_s)):
        wgt = _axis_weights(length, freq_mode)
        if kind == "ideal":
            axes.append((wgt / length < rho).astype(np.float64))
        else:
            axes.append(np.exp(-0.5 * (wgt / (rho * length)) ** 2))
    mask = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return FrequencyFilter(mask, kind, (cutoff_t, cutoff_s))


@dataclass
class RefineConfig:
    enabled: bool = True
    tau: int | None = None  # None -> schedule T - 1
    filter_kind: str = "ideal"
    cutoff_t: float = 0.25
    cutoff_s: float = 0.25
    freq_mode: str = "dct"

    def resolve_tau(self, sched: NoiseSchedule) -> int:
        tau = sched.T - 1 if self.tau is None else self.tau
        if not (1 <= tau <= sched.T - 1):
            raise ValueError(f"tau {tau} outside [1, {sched.T - 1}]")
        return tau


def refine_noise(z1: np.ndarray, eps: np.ndarray, cfg: RefineConfig,
                 sched: NoiseSchedule, noise_for_tau: np.ndarray) -> np.ndarray:
    """Blend the low band of the noised first-frame latent into fresh noise.

    z1: (c, h, w) latent frame; eps, noise_for_tau: (N-1, c, h, w).
    Disabled refinement returns eps unchanged.
    """
    if not cfg.enabled:
        return eps
    n1, c, h, w = eps.shape
    if z1.shape != (c, h, w):
        raise ValueError(f"z1 shape {z1.shape} incompatible with noise {eps.shape}")
    if noise_for_tau.shape != eps.shape:
        raise ValueError("noise_for_tau must match the noise shape")
    tau = cfg.resolve_tau(sched)

    rep = np.broadcast_to(z1, eps.shape).copy()
    z1_tau = q_sample(rep, tau, noise_for_tau, sched)
    filt = make_lowpass((n1, h, w), cfg.filter_kind, cfg.cutoff_t, cfg.cutoff_s,
                        cfg.freq_mode)
    mask = filt.mask[:, None, :, :]  # broadcast over channels
    if cfg.freq_mode == "fft":
        blended = ifft3(fft3(z1_tau) * mask + fft3(eps) * (1.0 - mask))
    else:
        blended = idct3(dct3(z1_tau) * mask + dct3(eps) * (1.0 - mask))
    return blended.astype(eps.dtype)


def low_band_energy_fraction(x: np.ndarray, frac: float, freq_mode: str = "dct") -> float:
    """Fraction of spectral energy in the low corner (per-axis normalized
    frequency below `frac` on every (time, height, width) axis)."""
    if freq_mode == "dct":
        coeffs = dct3(x)
        energy = coeffs**2
    else:
        coeffs = fft3(x)
        energy = np.abs(coeffs) ** 2
    nt, h, w = x.shape[-4], x.shape[-2], x.shape[-1]
    masks = []
    for axis_len in (nt, h, w):
        wgt = _axis_weights(axis_len, freq_mode)
        masks.append(wgt / axis_len < frac)
    sel = masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]
    sel = sel[:, None, :, :]
    total = float(energy.sum())
    if total == 0.0:
        return 0.0
    return float(energy[np.broadcast_to(sel, energy.shape)].sum() / total)
