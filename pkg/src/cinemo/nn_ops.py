"""Minimal dense/conv layer primitives with analytic gradients.

Everything is channel-last internally so im2col reduces to one reshape and
the heavy lifting is a single GEMM per layer. All ops preserve the input
dtype: training runs in float32, gradient checking in float64.
"""

from __future__ import annotations

import numpy as np


def _im2col2d(x: np.ndarray) -> np.ndarray:
    """x (P, H, W, C) -> columns (P*H*W, 9*C) for a 3x3 same-pad conv.

    The width taps and channels of a row are adjacent in memory, so the
    gather copies contiguous 3*C runs.
    """
    p, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    s = xp.strides
    v = np.lib.stride_tricks.as_strided(
        xp, shape=(p, h, w, 3, 3 * c), strides=(s[0], s[1], s[2], s[1], s[3])
    )
    return v.reshape(p * h * w, 9 * c)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 stride-1 same-pad convolution.

    x: (P, H, W, Cin); w: (3, 3, Cin, Cout); b: (Cout,).
    Returns (y, cols) with cols kept for the backward pass.
    """
    cout = w.shape[-1]
    cols = _im2col2d(x)
    y = cols @ w.reshape(-1, cout)
    y += b
    return y.reshape(x.shape[:-1] + (cout,)), cols


def conv2d_backward(dy: np.ndarray, w: np.ndarray, cols: np.ndarray,
                    need_dx: bool = True):
    """Gradients of conv2d: returns (dx, dw, db); dx is None when skipped."""
    cout = w.shape[-1]
    dyf = dy.reshape(-1, cout)
    dw = (cols.T @ dyf).reshape(w.shape)
    db = dyf.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # dx is a same-pad conv of dy with spatially flipped, channel-swapped taps
    w_hat = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    dx, _ = conv2d(dy, w_hat, np.zeros(w_hat.shape[-1], dtype=dy.dtype))
    return dx, dw, db


def _pad_time(x: np.ndarray, d: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (d, d), (0, 0), (0, 0), (0, 0)))


def conv1d_time(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int = 1):
    """Temporal mixing: kernel-3 dilated conv along the frame axis.

    x: (B, N, H, W, C); w: (3, Cin, Cout); b: (Cout,). Zero padding keeps the
    frame count unchanged. Implemented as tap-shifted GEMMs on contiguous
    views (frames are memory slabs), so there is no im2col gather.
    Returns (y, xp) with the padded input kept for the backward pass.
    """
    bsz, n, h, wd, cin = x.shape
    cout = w.shape[-1]
    d = dilation
    xp = _pad_time(x, d)
    y = np.empty((bsz, n, h, wd, cout), dtype=x.dtype)
    yf = y.reshape(bsz, n * h * wd, cout)
    for bi in range(bsz):
        acc = xp[bi, 0 : n].reshape(-1, cin) @ w[0]
        acc += xp[bi, d : d + n].reshape(-1, cin) @ w[1]
        acc += xp[bi, 2 * d : 2 * d + n].reshape(-1, cin) @ w[2]
        yf[bi] = acc
    y += b
    return y, xp


def conv1d_time_backward(dy: np.ndarray, w: np.ndarray, xp: np.ndarray, dilation: int):
    """Gradients of conv1d_time: returns (dx, dw, db)."""
    bsz, n, h, wd, cout = dy.shape
    cin = w.shape[1]
    d = dilation
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for bi in range(bsz):
        dyf = dy[bi].reshape(-1, cout)
        for k in range(3):
            sl = xp[bi, k * d : k * d + n].reshape(-1, cin)
            dw[k] += sl.T @ dyf
            dxp[bi, k * d : k * d + n] += (dyf @ w[k].T).reshape(n, h, wd, cin)
    db = dy.sum(axis=(0, 1, 2, 3))
    return dxp[:, d : d + n] if d else dxp, dw, db


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (..., Din) @ w (Din, Dout) + b."""
    return x @ w + b


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients of linear: returns (dx, dw, db)."""
    dyf = dy.reshape(-1, dy.shape[-1])
    xf = x.reshape(-1, x.shape[-1])
    return dy @ w.T, xf.T @ dyf, dyf.sum(axis=0)


def silu(x: np.ndarray):
    """x * sigmoid(x); returns (y, sigmoid) with sigmoid cached.

    sigmoid via tanh keeps extreme inputs overflow-free in float32.
    """
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * sig, sig


def silu_backward(dy: np.ndarray, x: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return dy * sig * (1.0 + x * (1.0 - sig))
