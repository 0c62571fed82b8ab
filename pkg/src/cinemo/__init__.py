"""Desk-scale image animation: motion-residual diffusion with SSIM-based
motion-intensity buckets and DCT-based inference noise refinement.

Everything runs on numpy/scipy; the trainable denoiser is a small hand-rolled
convnet with analytic gradients so the full pipeline trains on a CPU in
minutes.
"""

__version__ = "0.1.0"
