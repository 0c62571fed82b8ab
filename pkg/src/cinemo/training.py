"""Training loop for the residual denoiser.

Each iteration draws clips from the corpus, subsamples them with a random
frame interval in [3, 10], measures the motion bucket from the subsampled
pixel clip, encodes to latents, forms first-frame residuals, noises them at
a per-sample uniform timestep, and takes one Adam step on the noise
prediction loss. Class conditioning is dropped to the null class with
probability 0.5 to support classifier-free guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserConfig, loss
from .diffusion import NoiseSchedule
from .latent_codec import encode
from .motion_residual import residuals_from_latents
from .ssim_motion import clip_bucket
from .video_io import VideoClip, subsample


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 2
    n_steps: int = 5000
    prompt_drop_prob: float = 0.5
    seed: int = 0
    n_frames: int = 16
    interval_min: int = 3
    interval_max: int = 10

    def validate(self) -> None:
        if not (0.0 <= self.prompt_drop_prob <= 1.0):
            raise ValueError("prompt_drop_prob must be in [0, 1]")
        if self.batch_size < 1 or self.n_steps < 0 or self.n_frames < 2:
            raise ValueError("bad batch_size/n_steps/n_frames")
        if not (1 <= self.interval_min <= self.interval_max):
            raise ValueError("bad interval range")


class AdamState:
    """Plain Adam with bias correction."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params, grads, cfg: TrainConfig) -> None:
        self.step += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            params[k] -= cfg.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.adam_eps)


def sample_batch(rng: np.random.Generator, dataset: list[VideoClip],
                 cfg: TrainConfig, model_cfg: DenoiserConfig,
                 sched: NoiseSchedule) -> dict:
    """Draw one training batch following the per-sample recipe above."""
    z1s, ms, buckets, classes = [], [], [], []
    for _ in range(cfg.batch_size):
        clip = dataset[int(rng.integers(len(dataset)))]
        interval = int(rng.integers(cfg.interval_min, cfg.interval_max + 1))
        span = (cfg.n_frames - 1) * interval
        offset = int(rng.integers(0, clip.n_frames - span))
        window = VideoClip(clip.frames[offset:], clip.meta)
        v = subsample(window, interval, cfg.n_frames)
        buckets.append(clip_bucket(v))
        z = encode(v, model_cfg.patch).z
        z1s.append(z[0])
        ms.append(residuals_from_latents(z))
        classes.append(clip.meta.motion_class)

    bsz = cfg.batch_size
    shape = (bsz, cfg.n_frames - 1, *z1s[0].shape)
    return {
        "z1": np.stack(z1s),
        "m": np.stack(ms),
        "b": np.asarray(buckets),
        "class_ids": np.asarray(classes),
        "t": rng.integers(1, sched.T + 1, size=bsz),
        "eps": rng.standard_normal(shape).astype(np.float32),
        "drop_mask": rng.random(bsz) < cfg.prompt_drop_prob,
    }


def train(params: dict[str, np.ndarray], dataset: list[VideoClip],
          cfg: TrainConfig, model_cfg: DenoiserConfig, sched: NoiseSchedule,
          log_every: int = 0) -> tuple[dict[str, np.ndarray], list[float]]:
    """Run cfg.n_steps Adam iterations; returns (params, loss history).

    Deterministic for a fixed (seed, dataset, config) on one thread.
    Aborts with a diagnostic if the loss goes non-finite.
    """
    cfg.validate()
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(params)
    history: list[float] = []
    for step in range(cfg.n_steps):
        batch = sample_batch(rng, dataset, cfg, model_cfg, sched)
        value, grads = loss(params, model_cfg, batch, sched, with_grads=True)
        if not np.isfinite(value):
            raise RuntimeError(f"training diverged: loss={value} at step {step}")
        adam.update(params, grads, cfg)
        history.append(value)
        if log_every and (step + 1) % log_every == 0:
            recent = float(np.mean(history[-log_every:]))
            print(f"step {step + 1:6d}  loss {recent:.4f}")
    return params, history


def smoothed_loss(history: list[float], step: int, window: int = 50) -> float:
    """Trailing-window average of the loss around a 1-indexed step."""
    if not history:
        raise ValueError("empty loss history")
    idx = min(step, len(history))
    lo = max(0, idx - window)
    return float(np.mean(history[lo:idx]))
