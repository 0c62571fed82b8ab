"""End-to-end animation and inversion on top of the trained denoiser.

Sampling runs 50-step deterministic DDIM over the motion-residual stack with
classifier-free guidance (two predictions per step: null class and given
class); the clean first-frame latent is re-attached as frame 0 at every
step, so the decoded video starts exactly at the input image.
"""

from __future__ import annotations

import numpy as np

from .denoiser import DenoiserConfig, forward
from .dctinit import RefineConfig, refine_noise
from .diffusion import (NoiseSchedule, SamplerConfig, cfg_combine, ddim_invert_step,
                        ddim_step, sampling_timesteps)
from .latent_codec import decode_frames, encode, encode_frame
from .motion_residual import (assemble_model_input, extract_residual_prediction,
                              latents_from_residuals, residuals_from_latents)
from .video_io import ClipMeta, VideoClip


class AnimatePipeline:
    """Bundles params, schedule and sampler settings for repeated use."""

    def __init__(self, params: dict[str, np.ndarray], model_cfg: DenoiserConfig,
                 sched: NoiseSchedule, sampler: SamplerConfig | None = None,
                 guidance_scale: float = 7.5, refine: RefineConfig | None = None,
                 n_frames: int = 16, pixel_channels: int = 3):
        self.params = params
        self.model_cfg = model_cfg
        self.sched = sched
        self.sampler = sampler or SamplerConfig()
        self.sampler.validate(sched.T)
        self.guidance_scale = float(guidance_scale)
        self.refine = refine or RefineConfig()
        self.n_frames = n_frames
        self.pixel_channels = pixel_channels

    # -- noise ---------------------------------------------------------------

    def latent_shape(self, image: np.ndarray) -> tuple[int, int, int, int]:
        c, h, w = image.shape
        k = self.model_cfg.patch
        return (self.n_frames - 1, c * k * k, h // k, w // k)

    def initial_noise(self, z1: np.ndarray, seed: int) -> np.ndarray:
        """Draw residual-stack noise for one seed, refined when enabled."""
        shape = (self.n_frames - 1, *z1.shape)
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal(shape).astype(np.float32)
        noise_for_tau = rng.standard_normal(shape).astype(np.float32)
        return refine_noise(z1, eps, self.refine, self.sched, noise_for_tau)

    # -- sampling ------------------------------------------------------------

    def _predict(self, m: np.ndarray, z1: np.ndarray, t: int, bucket: int,
                 class_id: int, guidance: float) -> np.ndarray:
        """Guided noise prediction for a batch of residual stacks (S, N-1, ...)."""
        s = m.shape[0]
        z1b = np.broadcast_to(z1, (s, *z1.shape))
        x = assemble_model_input(z1b, m)
        null = self.model_cfg.null_class_id
        if guidance == 1.0:  # cfg_combine(u, c, 1) == c: skip the null pass
            y = forward(self.params, self.model_cfg, x,
                        np.full(s, t), np.full(s, bucket), np.full(s, class_id))
            return extract_residual_prediction(y)
        xx = np.concatenate([x, x], axis=0)
        ids = np.concatenate([np.full(s, null), np.full(s, class_id)])
        y = forward(self.params, self.model_cfg, xx,
                    np.full(2 * s, t), np.full(2 * s, bucket), ids)
        eps_all = extract_residual_prediction(y)
        return cfg_combine(eps_all[:s], eps_all[s:], guidance)

    def sample_residuals(self, z1: np.ndarray, m_init: np.ndarray, class_id: int,
                         bucket: int, guidance: float | None = None) -> np.ndarray:
        """DDIM from noise to clean residuals. m_init: (S, N-1, c, h, w)."""
        w = self.guidance_scale if guidance is None else guidance
        m = m_init.astype(np.float32, copy=True)
        for t, t_prev in sampling_timesteps(self.sched.T, self.sampler.n_steps):
            eps_hat = self._predict(m, z1, t, bucket, class_id, w)
            m = ddim_step(m, eps_hat, t, t_prev, self.sched)
            if not np.isfinite(m).all():
                raise RuntimeError(f"sampling produced non-finite values at step t={t}")
        return m

    def animate_batch(self, image: np.ndarray, class_id: int, bucket: int,
                      seeds: list[int], init_noise: np.ndarray | None = None,
                      guidance: float | None = None) -> list[VideoClip]:
        """Animate one image for several seeds in a single batched run."""
        z1 = encode_frame(image, self.model_cfg.patch)
        if init_noise is not None:
            m_init = np.broadcast_to(init_noise, (len(seeds), *init_noise.shape)).copy()
        else:
            m_init = np.stack([self.initial_noise(z1, s) for s in seeds])
        m = self.sample_residuals(z1, m_init, class_id, bucket, guidance)
        clips = []
        for i, seed in enumerate(seeds):
            latents = latents_from_residuals(z1, m[i])
            frames = decode_frames(latents, self.model_cfg.patch, self.pixel_channels)
            clips.append(VideoClip(frames.astype(np.float32),
                                   ClipMeta(class_id, 0.0, seed)))
        return clips

    def animate(self, image: np.ndarray, class_id: int, bucket: int, seed: int,
                init_noise: np.ndarray | None = None,
                guidance: float | None = None) -> VideoClip:
        return self.animate_batch(image, class_id, bucket, [seed],
                                  init_noise=init_noise, guidance=guidance)[0]

    # -- inversion -----------------------------------------------------------

    def invert(self, clip: VideoClip, class_id: int, bucket: int,
               guidance: float = 1.0) -> np.ndarray:
        """DDIM inversion: recover the initial residual noise of a clip.

        The model is evaluated at each pair's upper timestep, mirroring the
        forward sampler; guidance defaults to 1 because strong guidance makes
        inversion lossy.
        """
        z = encode(clip, self.model_cfg.patch).z
        z1 = z[0]
        m = residuals_from_latents(z)[None].astype(np.float32)
        pairs = sampling_timesteps(self.sched.T, self.sampler.n_steps)
        for t, t_prev in reversed(pairs):
            eps_hat = self._predict(m, z1, t, bucket, class_id, guidance)
            m = ddim_invert_step(m, eps_hat, t_prev, t, self.sched)
            if not np.isfinite(m).all():
                raise RuntimeError(f"inversion produced non-finite values at step t={t}")
        return m[0]
