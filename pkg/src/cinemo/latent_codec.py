"""Exactly invertible pixel <-> latent codec.

Space-to-depth patchify plus a fixed affine map stands in for a pretrained
VAE: the latent has lower spatial resolution and more channels, and
decode(encode(x)) == x exactly, which makes first-frame consistency of the
animation pipeline an assertable property rather than an approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .video_io import ClipMeta, VideoClip

GAIN = 2.0
BIAS = -1.0


@dataclass
class LatentClip:
    """Latent frames (N, c, h, w) with the codec constants used to build them."""

    z: np.ndarray
    patch: int
    gain: float = GAIN
    bias: float = BIAS
    meta: ClipMeta = field(default_factory=ClipMeta)

    @property
    def n_frames(self) -> int:
        return self.z.shape[0]


def space_to_depth(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, H/k, W/k)."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"spatial dims {(h, w)} not divisible by patch size {k}")
    x = x.reshape(n, c, h // k, k, w // k, k)
    x = x.transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * k * k, h // k, w // k)


def depth_to_space(z: np.ndarray, k: int, channels: int) -> np.ndarray:
    """Inverse of space_to_depth."""
    n, ck2, h, w = z.shape
    if ck2 != channels * k * k:
        raise ValueError(f"latent channels {ck2} != {channels}*{k}^2")
    z = z.reshape(n, channels, k, k, h, w)
    z = z.transpose(0, 1, 4, 2, 5, 3)
    return z.reshape(n, channels, h * k, w * k)


def encode(clip: VideoClip, patch: int = 2) -> LatentClip:
    """Patchify each frame and map [0, 1] pixels to roughly [-1, 1] latents."""
    z = GAIN * space_to_depth(clip.frames.astype(np.float32, copy=False), patch) + BIAS
    return LatentClip(z.astype(np.float32), patch, GAIN, BIAS, replace(clip.meta))


def decode(latent: LatentClip) -> VideoClip:
    """Exact inverse of encode. No clamping here; export quantizes instead."""
    if latent.patch < 1:
        raise ValueError("latent is missing a valid patch size")
    ck2 = latent.z.shape[1]
    channels = ck2 // (latent.patch**2)
    if channels * latent.patch**2 != ck2:
        raise ValueError(f"latent channels {ck2} not divisible by patch^2")
    x = (latent.z - latent.bias) / latent.gain
    frames = depth_to_space(x, latent.patch, channels)
    return VideoClip(frames.astype(np.float32), replace(latent.meta))


def encode_frame(frame: np.ndarray, patch: int = 2) -> np.ndarray:
    """Encode a single (C, H, W) pixel frame to a (c, h, w) latent frame."""
    return GAIN * space_to_depth(frame[None].astype(np.float32, copy=False), patch)[0] + BIAS


def decode_frames(z: np.ndarray, patch: int, channels: int) -> np.ndarray:
    """Decode latent frames (N, c, h, w) back to pixel frames (N, C, H, W)."""
    return depth_to_space((z - BIAS) / GAIN, patch, channels)
