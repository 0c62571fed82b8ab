"""Motion-residual representation: the stack M = {z_i - z_1} that the
diffusion model denoises, and the assembly of the N-frame model input whose
frame 0 is always the clean first-frame latent."""

from __future__ import annotations

import numpy as np


def residuals_from_latents(z: np.ndarray) -> np.ndarray:
    """(N, c, h, w) latents -> (N-1, c, h, w) residuals m_i = z_{i+1} - z_1."""
    if z.shape[0] < 2:
        raise ValueError("need at least 2 latent frames to form residuals")
    return z[1:] - z[0]


def latents_from_residuals(z1: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Rebuild latents {z1, z1 + m_i}; frame 0 is z1 bit-exactly."""
    if m.shape[1:] != z1.shape:
        raise ValueError(f"residual frames {m.shape[1:]} incompatible with z1 {z1.shape}")
    return np.concatenate([z1[None].copy(), z1[None] + m], axis=0)


def assemble_model_input(z1: np.ndarray, m_t: np.ndarray) -> np.ndarray:
    """Model input X_t = [z1, m_t + z1]: (N-1)-frame noised residuals plus the
    anchor frame. Works batched: z1 (..., c, h, w), m_t (..., N-1, c, h, w)."""
    if m_t.shape[-3:] != z1.shape[-3:]:
        raise ValueError(f"shape mismatch: m_t {m_t.shape} vs z1 {z1.shape}")
    anchor = np.expand_dims(z1, axis=-4)
    return np.concatenate([anchor.copy(), m_t + anchor], axis=-4)


def extract_residual_prediction(model_output: np.ndarray) -> np.ndarray:
    """Drop frame 0 of the model output; frames 1..N-1 are the residual
    noise prediction. Accepts leading batch axes."""
    if model_output.shape[-4] < 2:
        raise ValueError("model output must have at least 2 frames")
    return model_output[..., 1:, :, :, :]
