import numpy as np
import pytest

from cinemo import nn_ops as ops
from cinemo.denoiser import (DenoiserConfig, conditioning_vector, forward, grad_check,
                             init_params, load_checkpoint, loss, param_count,
                             save_checkpoint)
from cinemo.diffusion import bucket_embedding, make_schedule, timestep_embedding
from cinemo.training import AdamState, TrainConfig, sample_batch, train
from cinemo.video_io import DatasetSpec, generate_clip

TINY = DenoiserConfig(base_channels=6, n_blocks=2, embed_dim=16, n_classes=3,
                      patch=2, in_channels=4)


@pytest.fixture(scope="module")
def sched():
    return make_schedule()


def tiny_batch(seed=0, bsz=2, n=2):
    rng = np.random.default_rng(seed)
    return {
        "z1": rng.standard_normal((bsz, 4, 4, 4)).astype(np.float32),
        "m": rng.standard_normal((bsz, n - 1, 4, 4, 4)).astype(np.float32),
        "b": rng.integers(0, 20, bsz),
        "class_ids": rng.integers(0, 3, bsz),
        "t": rng.integers(1, 1001, bsz),
        "eps": rng.standard_normal((bsz, n - 1, 4, 4, 4)).astype(np.float32),
        "drop_mask": rng.random(bsz) < 0.5,
    }


def small_dataset():
    spec = DatasetSpec(n_clips=4)
    return [generate_clip(spec, i % 4, float(i), seed=i) for i in range(4)], spec


# -- layer ops -----------------------------------------------------------------


def finite_diff(f, x, h=1e-2):
    # the ops under test are linear in x, so truncation error is zero and a
    # large step keeps float64 cancellation noise far below the tolerance
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def test_conv2d_gradients_exact(rng):
    # linear op: central differences are exact up to roundoff
    x = rng.standard_normal((2, 5, 5, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    proj = rng.standard_normal((2, 5, 5, 4))

    def f():
        y, _ = ops.conv2d(x, w, b)
        return float((y * proj).sum())

    _, cols = ops.conv2d(x, w, b)
    dx, dw, db = ops.conv2d_backward(proj, w, cols)
    assert np.abs(dw - finite_diff(f, w)).max() < 1e-8
    assert np.abs(db - finite_diff(f, b)).max() < 1e-8
    assert np.abs(dx - finite_diff(f, x)).max() < 1e-8


def test_conv1d_time_gradients_exact(rng):
    x = rng.standard_normal((2, 4, 3, 3, 2))
    w = rng.standard_normal((3, 2, 5))
    b = rng.standard_normal(5)
    proj = rng.standard_normal((2, 4, 3, 3, 5))
    for dilation in (1, 2):
        def f():
            y, _ = ops.conv1d_time(x, w, b, dilation)
            return float((y * proj).sum())

        _, xp = ops.conv1d_time(x, w, b, dilation)
        dx, dw, db = ops.conv1d_time_backward(proj, w, xp, dilation)
        assert np.abs(dw - finite_diff(f, w)).max() < 1e-8
        assert np.abs(db - finite_diff(f, b)).max() < 1e-8
        assert np.abs(dx - finite_diff(f, x)).max() < 1e-8


def test_silu_gradient(rng):
    x = rng.standard_normal((64,))
    y, sig = ops.silu(x)
    dy = rng.standard_normal((64,))
    dx = ops.silu_backward(dy, x, sig)
    h = 1e-6
    yp, _ = ops.silu(x + h)
    ym, _ = ops.silu(x - h)
    fd = (yp - ym) / (2 * h)
    assert np.abs(dx - dy * fd).max() < 1e-6


# -- model ---------------------------------------------------------------------


def test_init_deterministic():
    a = init_params(TINY, seed=5)
    b = init_params(TINY, seed=5)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(TINY, seed=6)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_param_count_stable():
    params = init_params(DenoiserConfig(), seed=0)
    # conv_in + 4 blocks (spatial, cond, temporal) + conv_out + class table
    expected = (9 * 12 * 32 + 32) + 4 * ((9 * 32 * 32 + 32) + (128 * 32 + 32) + (3 * 32 * 32 + 32)) \
        + (9 * 32 * 12 + 12) + 5 * 128
    assert param_count(params) == expected == 73516


def test_zero_init_output(rng):
    params = init_params(TINY, seed=0)
    x = rng.standard_normal((3, 4, 4, 4)).astype(np.float32)
    y = forward(params, TINY, x, 10, 3, 1)
    assert y.shape == x.shape
    assert np.all(y == 0.0)


def test_forward_finite_for_extreme_inputs():
    params = init_params(TINY, seed=0)
    params["conv_out.w"] += 0.05  # make the output nontrivial
    x = np.full((3, 4, 4, 4), 10.0, dtype=np.float32)
    assert np.all(np.isfinite(forward(params, TINY, x, 1000, 19, 0)))
    assert np.all(np.isfinite(forward(params, TINY, -x, 1, 0, 2)))


def test_conditioning_additivity():
    params = init_params(TINY, seed=1)
    cond = conditioning_vector(params, TINY, 7, 4, 2)
    expected = (timestep_embedding(7, 16) + bucket_embedding(4, 16)).astype(np.float32) \
        + params["class_embed"][2]
    assert np.allclose(cond[0], expected, atol=1e-6)


def test_unknown_class_rejected(rng):
    params = init_params(TINY, seed=0)
    x = rng.standard_normal((3, 4, 4, 4)).astype(np.float32)
    with pytest.raises(ValueError):
        forward(params, TINY, x, 5, 3, TINY.n_classes + 1)


def test_null_class_path_ignores_class(sched):
    params = init_params(TINY, seed=2)
    batch = tiny_batch(seed=3)
    batch["drop_mask"] = np.array([True, True])
    l1 = loss(params, TINY, batch, sched)
    batch2 = dict(batch)
    batch2["class_ids"] = (batch["class_ids"] + 1) % TINY.n_classes
    assert loss(params, TINY, batch2, sched) == l1


def test_bucket_changes_output_after_training(sched):
    # a few steps are enough to lift conv_out off zero
    dataset, _ = small_dataset()
    params = init_params(DenoiserConfig(), seed=0)
    cfg = TrainConfig(n_steps=30, batch_size=2, seed=0)
    params, _ = train(params, dataset, cfg, DenoiserConfig(), sched)
    x = np.random.default_rng(0).standard_normal((16, 12, 16, 16)).astype(np.float32)
    y0 = forward(params, DenoiserConfig(), x, 500, 0, 1)
    y18 = forward(params, DenoiserConfig(), x, 500, 18, 1)
    assert float(np.linalg.norm(y0 - y18)) > 0


def test_loss_zero_when_predicting_eps(sched):
    # zero-init model with eps == 0 is an exact predictor
    params = init_params(TINY, seed=0)
    batch = tiny_batch(seed=1)
    batch["eps"] = np.zeros_like(batch["eps"])
    assert loss(params, TINY, batch, sched) == 0.0


def test_zero_init_loss_is_eps_power(sched):
    params = init_params(TINY, seed=0)
    batch = tiny_batch(seed=2, bsz=8, n=16)
    value = loss(params, TINY, batch, sched)
    assert value == pytest.approx(float(np.mean(batch["eps"] ** 2)), abs=1e-6)
    assert value == pytest.approx(1.0, abs=0.05)
    assert value >= 0.0


def test_chunked_forward_matches_small_batch(rng):
    params = init_params(TINY, seed=4)
    params["conv_out.w"] = rng.standard_normal(params["conv_out.w"].shape).astype(np.float32) * 0.1
    x = rng.standard_normal((5, 3, 4, 4, 4)).astype(np.float32)
    t = rng.integers(1, 1000, 5)
    b = rng.integers(0, 20, 5)
    ids = rng.integers(0, 3, 5)
    full = forward(params, TINY, x, t, b, ids)
    each = np.stack([forward(params, TINY, x[i], t[i], b[i], ids[i]) for i in range(5)])
    assert np.allclose(full, each, atol=1e-5)


def test_grad_check_tiny_model(sched):
    params = init_params(TINY, seed=0)
    err = grad_check(params, TINY, tiny_batch(), sched, n_coords=200, seed=7)
    assert err < 1e-3


def test_grad_check_deterministic(sched):
    params = init_params(TINY, seed=0)
    a = grad_check(params, TINY, tiny_batch(), sched, n_coords=50, seed=3)
    b = grad_check(params, TINY, tiny_batch(), sched, n_coords=50, seed=3)
    assert a == b


# -- training ------------------------------------------------------------------


def test_train_step_changes_params(sched):
    dataset, _ = small_dataset()
    cfg = TrainConfig(n_steps=1, batch_size=2, seed=0)
    params = init_params(DenoiserConfig(), seed=0)
    before = {k: v.copy() for k, v in params.items()}
    params, hist = train(params, dataset, cfg, DenoiserConfig(), sched)
    assert len(hist) == 1
    assert any(not np.array_equal(before[k], params[k]) for k in params)


def test_train_reproducible(sched):
    dataset, _ = small_dataset()
    cfg = TrainConfig(n_steps=5, batch_size=2, seed=11)
    p1, h1 = train(init_params(DenoiserConfig(), seed=1), dataset, cfg,
                   DenoiserConfig(), sched)
    p2, h2 = train(init_params(DenoiserConfig(), seed=1), dataset, cfg,
                   DenoiserConfig(), sched)
    assert h1 == h2
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


def test_train_zero_steps_identity(sched):
    dataset, _ = small_dataset()
    cfg = TrainConfig(n_steps=0, batch_size=2, seed=0)
    params = init_params(DenoiserConfig(), seed=0)
    before = {k: v.copy() for k, v in params.items()}
    params, hist = train(params, dataset, cfg, DenoiserConfig(), sched)
    assert hist == []
    assert all(np.array_equal(before[k], params[k]) for k in params)


def test_train_empty_dataset(sched):
    with pytest.raises(ValueError):
        train(init_params(TINY, seed=0), [], TrainConfig(), TINY, sched)


def test_sample_batch_shapes(sched):
    dataset, _ = small_dataset()
    rng = np.random.default_rng(0)
    cfg = TrainConfig(batch_size=3)
    mcfg = DenoiserConfig()
    batch = sample_batch(rng, dataset, cfg, mcfg, sched)
    assert batch["z1"].shape == (3, 12, 16, 16)
    assert batch["m"].shape == (3, 15, 12, 16, 16)
    assert batch["eps"].shape == (3, 15, 12, 16, 16)
    assert np.all((batch["t"] >= 1) & (batch["t"] <= 1000))
    assert np.all((batch["b"] >= 0) & (batch["b"] <= 19))


def test_adam_moves_toward_minimum():
    # 1D quadratic sanity check of the optimizer itself
    params = {"x": np.array([5.0], dtype=np.float32)}
    adam = AdamState(params)
    cfg = TrainConfig(lr=0.1)
    for _ in range(500):
        adam.update(params, {"x": 2.0 * params["x"]}, cfg)
    assert abs(float(params["x"][0])) < 1e-2


# -- checkpoint ----------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(TINY, seed=0)
    extra = {"n_frames": 2, "class_names": ["a", "b", "c"]}
    path = tmp_path / "model.cnmk"
    save_checkpoint(path, params, TINY, extra)
    back, cfg, meta = load_checkpoint(path)
    assert cfg == TINY
    assert meta["class_names"] == ["a", "b", "c"]
    assert back.keys() == params.keys()
    assert all(np.array_equal(back[k], params[k]) for k in params)
    # save again: byte-identical file
    path2 = tmp_path / "model2.cnmk"
    save_checkpoint(path2, back, cfg, meta)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.cnmk"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_config_validation():
    with pytest.raises(ValueError):
        DenoiserConfig(embed_dim=15).validate()
    with pytest.raises(ValueError):
        DenoiserConfig(n_blocks=0).validate()
