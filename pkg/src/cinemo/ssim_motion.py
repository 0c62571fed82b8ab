"""SSIM, clip motion intensity, and the 20-way motion bucket.

Motion intensity is the mean SSIM between consecutive frames; the bucket is
a linear quantization of (1 - intensity) into {0..19}, so bucket 0 means a
static clip and 19 means frames that are nearly uncorrelated.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.ndimage import correlate1d

from .video_io import VideoClip

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = (0.01) ** 2  # (k1 * L)^2 with L = 1
C2 = (0.03) ** 2

N_BUCKETS = 20


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian tap weights."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


_KERNEL = gaussian_window()


def _local_means(x: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means over the last two axes, valid positions only."""
    r = WINDOW_SIZE // 2
    y = correlate1d(x, _KERNEL, axis=-1, mode="constant")
    y = correlate1d(y, _KERNEL, axis=-2, mode="constant")
    return y[..., r:-r, r:-r]


def _ssim_map_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM maps for a stack of same-shaped single-channel images (..., H, W)."""
    mu1 = _local_means(a)
    mu2 = _local_means(b)
    s11 = _local_means(a * a) - mu1 * mu1
    s22 = _local_means(b * b) - mu2 * mu2
    s12 = _local_means(a * b) - mu1 * mu2
    return ((2.0 * mu1 * mu2 + C1) * (2.0 * s12 + C2)) / (
        (mu1 * mu1 + mu2 * mu2 + C1) * (s11 + s22 + C2)
    )


def _ssim_global(a: np.ndarray, b: np.ndarray) -> float:
    """Whole-image statistics fallback for frames smaller than the window."""
    vals = []
    for c in range(a.shape[0]):
        x, y = a[c], b[c]
        mu1, mu2 = x.mean(), y.mean()
        s11 = ((x - mu1) ** 2).mean()
        s22 = ((y - mu2) ** 2).mean()
        s12 = ((x - mu1) * (y - mu2)).mean()
        vals.append(
            ((2 * mu1 * mu2 + C1) * (2 * s12 + C2))
            / ((mu1**2 + mu2**2 + C1) * (s11 + s22 + C2))
        )
    return float(np.mean(vals))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM between two (C, H, W) frames in [0, 1].

    11x11 Gaussian window (sigma 1.5), per channel on the valid SSIM map,
    then averaged over channels. Frames smaller than the window fall back to
    global statistics (with a warning).
    """
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError(f"frame shapes must match and be (C, H, W): {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if min(a.shape[-2:]) < WINDOW_SIZE:
        warnings.warn(
            f"frame {a.shape[-2:]} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} "
            "SSIM window; using global statistics",
            stacklevel=2,
        )
        return _ssim_global(a, b)
    maps = _ssim_map_batch(a, b)
    return float(maps.reshape(a.shape[0], -1).mean(axis=1).mean())


def motion_intensity(clip: VideoClip) -> float:
    """Mean inter-frame SSIM of a clip: s = mean_i SSIM(x_i, x_{i-1})."""
    frames = np.asarray(clip.frames, dtype=np.float64)
    n = frames.shape[0]
    if n < 2:
        raise ValueError("motion intensity needs at least 2 frames")
    if min(frames.shape[-2:]) < WINDOW_SIZE:
        return float(np.mean([ssim(frames[i], frames[i - 1]) for i in range(1, n)]))
    # one batched pass over all (pair, channel) maps
    maps = _ssim_map_batch(frames[1:], frames[:-1])
    return float(maps.reshape(n - 1, -1).mean(axis=1).mean())


def intensity_to_bucket(s: float) -> int:
    """b = min(19, floor((1 - clamp(s, 0, 1)) * 20)); higher b = more motion."""
    s = min(1.0, max(0.0, float(s)))
    return min(N_BUCKETS - 1, int(np.floor((1.0 - s) * N_BUCKETS)))


def clip_bucket(clip: VideoClip) -> int:
    """Motion bucket of a clip (intensity measurement + quantization)."""
    return intensity_to_bucket(motion_intensity(clip))
