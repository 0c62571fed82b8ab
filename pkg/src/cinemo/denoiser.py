"""Toy conditional noise predictor for motion residuals.

Per-frame 3x3 conv residual blocks interleaved with dilated kernel-3
temporal convolutions (dilations 1, 2, 4, ... so the receptive field spans
the whole clip and every frame can see the clean anchor frame). The
conditioning vector -- timestep embedding + motion-bucket embedding + class
embedding -- is projected per block and added per channel, broadcast to all
frames.

Gradients are hand-rolled; `grad_check` verifies them against central
finite differences in float64.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import nn_ops as ops
from .diffusion import NoiseSchedule, bucket_embedding, q_sample, timestep_embedding
from .motion_residual import assemble_model_input

CHECKPOINT_MAGIC = b"CNMK"
CHECKPOINT_VERSION = 1


@dataclass
class DenoiserConfig:
    base_channels: int = 32
    n_blocks: int = 4
    embed_dim: int = 128
    n_classes: int = 4
    patch: int = 2
    in_channels: int = 12  # latent channels = pixel channels * patch^2

    @property
    def null_class_id(self) -> int:
        return self.n_classes

    def dilation(self, block: int) -> int:
        return 2**block

    def validate(self) -> None:
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even")
        if self.n_blocks < 1:
            raise ValueError("need at least one block")
        if self.base_channels < 1 or self.in_channels < 1 or self.n_classes < 1:
            raise ValueError("channel/class counts must be positive")


def init_params(config: DenoiserConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fan-in-scaled init; the output conv is zeroed so the initial
    prediction is identically zero."""
    config.validate()
    rng = np.random.default_rng(seed)
    cb, ci, d = config.base_channels, config.in_channels, config.embed_dim

    p: dict[str, np.ndarray] = {}
    p["conv_in.w"] = rng.normal(0.0, 1.0 / np.sqrt(9 * ci), (3, 3, ci, cb))
    p["conv_in.b"] = np.zeros(cb)
    for i in range(config.n_blocks):
        p[f"block{i}.spatial.w"] = rng.normal(0.0, 1.0 / np.sqrt(9 * cb), (3, 3, cb, cb))
        p[f"block{i}.spatial.b"] = np.zeros(cb)
        p[f"block{i}.cond.w"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, cb))
        p[f"block{i}.cond.b"] = np.zeros(cb)
        p[f"block{i}.temporal.w"] = rng.normal(0.0, 1.0 / np.sqrt(3 * cb), (3, cb, cb))
        p[f"block{i}.temporal.b"] = np.zeros(cb)
    p["conv_out.w"] = np.zeros((3, 3, cb, ci))
    p["conv_out.b"] = np.zeros(ci)
    p["class_embed"] = rng.normal(0.0, 0.1, (config.n_classes + 1, d))
    return {k: v.astype(np.float32) for k, v in p.items()}


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def conditioning_vector(params: dict[str, np.ndarray], config: DenoiserConfig,
                        t, b, class_ids) -> np.ndarray:
    """emb(t) + emb(b) + class embedding, shape (B, embed_dim)."""
    t = np.atleast_1d(np.asarray(t))
    b = np.atleast_1d(np.asarray(b))
    ids = np.atleast_1d(np.asarray(class_ids))
    if np.any(ids < 0) or np.any(ids > config.n_classes):
        raise ValueError(f"class id outside [0, {config.n_classes}]: {class_ids}")
    dtype = params["class_embed"].dtype
    cond = timestep_embedding(t, config.embed_dim) + bucket_embedding(b, config.embed_dim)
    return cond.astype(dtype) + params["class_embed"][ids]


def _forward(params, config: DenoiserConfig, x, t, b, class_ids, want_cache: bool):
    """Core forward in channel-last layout. x: (B, N, c, h, w) channel-first."""
    config.validate()
    dtype = params["class_embed"].dtype
    bsz, n = x.shape[0], x.shape[1]
    hcl = np.ascontiguousarray(x.transpose(0, 1, 3, 4, 2)).astype(dtype, copy=False)

    cond = conditioning_vector(params, config, t, b, class_ids)
    cache = {"cond": cond, "ids": np.atleast_1d(np.asarray(class_ids)), "blocks": []}

    flat = hcl.reshape(bsz * n, *hcl.shape[2:])
    h0, cols_in = ops.conv2d(flat, params["conv_in.w"], params["conv_in.b"])
    cache["cols_in"] = cols_in if want_cache else None
    h = h0.reshape(bsz, n, *h0.shape[1:])

    for i in range(config.n_blocks):
        blk = {}
        sp, blk["sp_cols"] = ops.conv2d(
            h.reshape(bsz * n, *h.shape[2:]), params[f"block{i}.spatial.w"],
            params[f"block{i}.spatial.b"])
        sp = sp.reshape(bsz, n, *sp.shape[1:])
        cb = ops.linear(cond, params[f"block{i}.cond.w"], params[f"block{i}.cond.b"])
        sp += cb[:, None, None, None, :]  # sp is freshly allocated by conv2d
        blk["sp_pre"] = sp
        s_act, blk["sp_sig"] = ops.silu(sp)

        tp, blk["tp_xp"] = ops.conv1d_time(
            s_act, params[f"block{i}.temporal.w"], params[f"block{i}.temporal.b"],
            dilation=config.dilation(i))
        blk["tp_pre"] = tp
        u, blk["tp_sig"] = ops.silu(tp)
        h = h + u
        if want_cache:
            cache["blocks"].append(blk)

    yf, cols_out = ops.conv2d(h.reshape(bsz * n, *h.shape[2:]),
                              params["conv_out.w"], params["conv_out.b"])
    cache["cols_out"] = cols_out if want_cache else None
    y = yf.reshape(bsz, n, *yf.shape[1:])
    out = np.ascontiguousarray(y.transpose(0, 1, 4, 2, 3))
    return out, cache


_FORWARD_CHUNK = 2  # keeps im2col buffers cache-friendly for big seed batches


def forward(params: dict[str, np.ndarray], config: DenoiserConfig, x: np.ndarray,
            t, b, class_ids) -> np.ndarray:
    """Predict per-frame noise for model input x.

    x: (N, c, h, w) for a single sample or (B, N, c, h, w) batched; returns
    the same shape. Large batches are processed in fixed-size chunks.
    """
    single = x.ndim == 4
    xb = x[None] if single else x
    bsz = xb.shape[0]
    if bsz <= _FORWARD_CHUNK:
        y, _ = _forward(params, config, xb, t, b, class_ids, want_cache=False)
        return y[0] if single else y
    t = np.broadcast_to(np.asarray(t), (bsz,))
    b = np.broadcast_to(np.asarray(b), (bsz,))
    ids = np.broadcast_to(np.asarray(class_ids), (bsz,))
    parts = []
    for lo in range(0, bsz, _FORWARD_CHUNK):
        hi = min(lo + _FORWARD_CHUNK, bsz)
        part, _ = _forward(params, config, xb[lo:hi], t[lo:hi], b[lo:hi], ids[lo:hi],
                           want_cache=False)
        parts.append(part)
    return np.concatenate(parts, axis=0)


def _backward(params, config: DenoiserConfig, dy, cache):
    """Backprop through _forward. dy: (B, N, c, h, w). Returns grads dict."""
    dtype = params["class_embed"].dtype
    bsz, n = dy.shape[0], dy.shape[1]
    g = {k: None for k in params}

    dyl = np.ascontiguousarray(dy.transpose(0, 1, 3, 4, 2)).astype(dtype, copy=False)
    dh_flat, g["conv_out.w"], g["conv_out.b"] = ops.conv2d_backward(
        dyl.reshape(bsz * n, *dyl.shape[2:]), params["conv_out.w"], cache["cols_out"])
    dh = dh_flat.reshape(bsz, n, *dh_flat.shape[1:])
    dcond = np.zeros_like(cache["cond"])

    for i in reversed(range(config.n_blocks)):
        blk = cache["blocks"][i]
        du = dh  # residual connection: gradient flows to both branch and skip
        dtp = ops.silu_backward(du, blk["tp_pre"], blk["tp_sig"])
        ds_act, g[f"block{i}.temporal.w"], g[f"block{i}.temporal.b"] = ops.conv1d_time_backward(
            dtp, params[f"block{i}.temporal.w"], blk["tp_xp"], config.dilation(i))
        dsp = ops.silu_backward(ds_act, blk["sp_pre"], blk["sp_sig"])

        dcb = dsp.sum(axis=(1, 2, 3))
        dcond_i, g[f"block{i}.cond.w"], g[f"block{i}.cond.b"] = ops.linear_backward(
            dcb, cache["cond"], params[f"block{i}.cond.w"])
        dcond += dcond_i

        dh_block, g[f"block{i}.spatial.w"], g[f"block{i}.spatial.b"] = ops.conv2d_backward(
            dsp.reshape(bsz * n, *dsp.shape[2:]), params[f"block{i}.spatial.w"],
            blk["sp_cols"])
        dh = dh + dh_block.reshape(bsz, n, *dh_block.shape[1:])

    _, g["conv_in.w"], g["conv_in.b"] = ops.conv2d_backward(
        dh.reshape(bsz * n, *dh.shape[2:]), params["conv_in.w"], cache["cols_in"],
        need_dx=False)

    g["class_embed"] = np.zeros_like(params["class_embed"])
    np.add.at(g["class_embed"], cache["ids"], dcond)
    return g


def loss(params: dict[str, np.ndarray], config: DenoiserConfig, batch: dict,
         sched: NoiseSchedule, with_grads: bool = False):
    """Training objective: MSE between the injected noise and the model's
    residual-frame prediction.

    batch keys: z1 (B,c,h,w), m (B,N-1,c,h,w), t (B,), b (B,),
    class_ids (B,), eps (B,N-1,c,h,w), drop_mask (B,) bool.
    Returns the scalar loss, or (loss, grads) when with_grads is set.
    """
    z1, m, eps = batch["z1"], batch["m"], batch["eps"]
    if eps.shape != m.shape:
        raise ValueError(f"eps shape {eps.shape} != residual shape {m.shape}")
    ids = np.where(batch["drop_mask"], config.null_class_id, batch["class_ids"])

    m_t = q_sample(m, batch["t"], eps, sched)
    x_t = assemble_model_input(z1, m_t)
    y, cache = _forward(params, config, x_t, batch["t"], batch["b"], ids,
                        want_cache=with_grads)
    resid = y[:, 1:] - eps  # frame 0 carries no supervision target
    value = float(np.mean(resid.astype(np.float64) ** 2))
    if not with_grads:
        return value
    dy = np.zeros_like(y)
    dy[:, 1:] = (2.0 / resid.size) * resid
    return value, _backward(params, config, dy, cache)


def grad_check(params: dict[str, np.ndarray], config: DenoiserConfig, batch: dict,
               sched: NoiseSchedule, n_coords: int = 200, h: float = 1e-3,
               seed: int = 0) -> float:
    """Max relative error between analytic gradients and float64 central
    finite differences over randomly sampled parameter coordinates."""
    p64 = {k: v.astype(np.float64) for k, v in params.items()}
    batch64 = {k: (v.astype(np.float64) if isinstance(v, np.ndarray) and v.dtype.kind == "f" else v)
               for k, v in batch.items()}
    _, grads = loss(p64, config, batch64, sched, with_grads=True)

    rng = np.random.default_rng(seed)
    names = sorted(p64)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(s)) for s in p64[name].shape)
        orig = p64[name][idx]
        p64[name][idx] = orig + h
        f_plus = loss(p64, config, batch64, sched)
        p64[name][idx] = orig - h
        f_minus = loss(p64, config, batch64, sched)
        p64[name][idx] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        an = float(grads[name][idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst


def save_checkpoint(path, params: dict[str, np.ndarray], config: DenoiserConfig,
                    extra: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON config block, named f32 tensors."""
    meta = {"config": asdict(config), "extra": extra or {}}
    blob = json.dumps(meta).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (params, config, extra)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    version, blob_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(data[off : off + blob_len].decode("utf-8"))
    off += blob_len
    (n_tensors,) = struct.unpack_from("<I", data, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        off += 4 * count
        params[name] = arr.reshape(shape).copy()
    cfg = DenoiserConfig(**meta["config"])
    return params, cfg, meta.get("extra", {})
