import numpy as np
import pytest

from cinemo.ssim_motion import (clip_bucket, gaussian_window, intensity_to_bucket,
                                motion_intensity, ssim)
from cinemo.video_io import DatasetSpec, VideoClip, generate_clip


def ssim_oracle(a, b):
    """Direct per-window evaluation of the SSIM formula in float64.

    No convolution tricks: every valid 11x11 window is reduced explicitly
    with Gaussian weights.
    """
    win = 11
    k1 = gaussian_window(win, 1.5)
    kern = np.outer(k1, k1)
    c1, c2 = 0.01**2, 0.03**2
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    chans = []
    for c in range(a.shape[0]):
        vals = []
        for i in range(a.shape[1] - win + 1):
            for j in range(a.shape[2] - win + 1):
                x = a[c, i : i + win, j : j + win]
                y = b[c, i : i + win, j : j + win]
                mx = (kern * x).sum()
                my = (kern * y).sum()
                sxx = (kern * x * x).sum() - mx * mx
                syy = (kern * y * y).sum() - my * my
                sxy = (kern * x * y).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * sxy + c2))
                            / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
        chans.append(np.mean(vals))
    return float(np.mean(chans))


def test_self_similarity_exact(rng):
    x = rng.random((3, 32, 32))
    assert ssim(x, x) == 1.0


def test_symmetry(rng):
    a, b = rng.random((3, 32, 32)), rng.random((3, 32, 32))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_bounded(rng):
    for _ in range(5):
        a, b = rng.random((3, 32, 32)), rng.random((3, 32, 32))
        assert abs(ssim(a, b)) <= 1.0


def test_zeros_vs_ones_matches_oracle():
    a = np.zeros((3, 32, 32))
    b = np.ones((3, 32, 32))
    assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-10
    # constant images: SSIM reduces to C1 / (1 + C1)
    assert ssim(a, b) == pytest.approx(1e-4 / (1 + 1e-4), rel=1e-9)


def test_oracle_agreement_random(rng):
    for _ in range(10):
        a = rng.random((3, 32, 32))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-10


def test_tiny_noise_high_similarity(rng):
    x = rng.random((3, 32, 32))
    y = np.clip(x + rng.normal(0.0, 1e-4, x.shape), 0.0, 1.0)
    assert ssim(x, y) > 0.99


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 32, 32)), np.zeros((3, 16, 16)))


def test_small_frame_fallback_warns(rng):
    a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    with pytest.warns(UserWarning, match="global statistics"):
        v = ssim(a, b)
    assert -1.0 <= v <= 1.0
    with pytest.warns(UserWarning):
        assert ssim(a, a) == pytest.approx(1.0)


def test_static_clip_intensity(small_spec):
    clip = generate_clip(small_spec, 0, 0.0, seed=4)
    assert motion_intensity(clip) == 1.0
    assert clip_bucket(clip) == 0


def test_two_frame_degenerate(rng):
    frames = rng.random((2, 3, 32, 32)).astype(np.float32)
    clip = VideoClip(frames)
    assert motion_intensity(clip) == pytest.approx(ssim(frames[1], frames[0]), abs=1e-12)


def test_single_frame_rejected(rng):
    clip = VideoClip(rng.random((1, 3, 32, 32)).astype(np.float32))
    with pytest.raises(ValueError):
        motion_intensity(clip)


def test_speed_lowers_intensity(small_spec):
    slow = generate_clip(small_spec, 0, 1.0, seed=13)
    fast = generate_clip(small_spec, 0, 4.0, seed=13)
    assert motion_intensity(fast) < motion_intensity(slow)


def test_bucket_boundaries():
    assert intensity_to_bucket(1.0) == 0
    assert intensity_to_bucket(0.0) == 19
    assert intensity_to_bucket(0.525) == 9
    # out-of-range values clamp
    assert intensity_to_bucket(1.7) == 0
    assert intensity_to_bucket(-0.3) == 19


def test_bucket_monotone_sweep():
    sweep = np.linspace(-0.1, 1.1, 1000)
    buckets = [intensity_to_bucket(s) for s in sweep]
    assert all(b1 >= b2 for b1, b2 in zip(buckets, buckets[1:]))
    assert set(buckets) == set(range(20))


def test_bucket_monotone_in_speed():
    spec = DatasetSpec(n_clips=1, speed_range=(0.0, 8.0))
    for seed in (0, 1, 2):
        buckets = [clip_bucket(generate_clip(spec, 0, v, seed=seed))
                   for v in (0, 1, 2, 4, 8)]
        assert buckets[0] == 0
        assert all(b1 <= b2 for b1, b2 in zip(buckets, buckets[1:])), (seed, buckets)
