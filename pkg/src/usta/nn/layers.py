"""Differentiable image layers on NCHW tensors.

Convolution is cross-correlation (no kernel flip), stride 1.  The transposed
convolution is the fixed 2x2 / stride-2 upsampler used by the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _node, default_dtype

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# im2col buffers are built a few samples at a time so they stay cache resident
_COLS_BUDGET = 1 << 17


def _col_chunks(xp, kh, kw, ho, wo):
    """Yield (start, stop, cols) with cols shaped (samples, c*kh*kw, ho*wo)."""
    n, c = xp.shape[:2]
    if kh == 1 and kw == 1:
        yield 0, n, xp[:, :, :ho, :wo].reshape(n, c, ho * wo)
        return
    chunk = max(1, _COLS_BUDGET // (c * kh * kw * ho * wo))
    buf = None
    for s0 in range(0, n, chunk):
        s1 = min(n, s0 + chunk)
        if buf is None or buf.shape[0] != s1 - s0:
            buf = np.empty((s1 - s0, c, kh, kw, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                buf[:, :, i, j] = xp[s0:s1, :, i:i + ho, j:j + wo]
        yield s0, s1, buf.reshape(s1 - s0, c * kh * kw, ho * wo)


def _correlate(xp, kernel, ho, wo):
    """Valid cross-correlation of an already padded NCHW array."""
    oc, _, kh, kw = kernel.shape
    wmat = kernel.reshape(oc, -1)
    out = np.empty((xp.shape[0], oc, ho * wo), dtype=np.result_type(xp, kernel))
    for s0, s1, cols in _col_chunks(xp, kh, kw, ho, wo):
        np.matmul(wmat, cols, out=out[s0:s1])
    return out.reshape(-1, oc, ho, wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIkk kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if ic != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {ic}")
    if not 0 <= padding < min(kh, kw):
        raise ValueError(f"padding must be in [0, kernel size), got {padding}")
    p = padding
    ho, wo = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h + 2 * p}x{w + 2 * p}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out = _correlate(xp, kernel.data, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            gm = g.reshape(n, oc, ho * wo)
            dw = np.zeros((oc, c * kh * kw), dtype=g.dtype)
            # (K, L) @ (L, oc) keeps the long axis as BLAS's inner dimension
            for s0, s1, cols in _col_chunks(xp, kh, kw, ho, wo):
                dw += np.matmul(cols, gm[s0:s1].transpose(0, 2, 1)).sum(axis=0).T
            kernel._accumulate(dw.reshape(kernel.shape))
        if x.requires_grad:
            # input gradient = full correlation of g with the flipped, transposed kernel
            q = (kh - 1 - p, kw - 1 - p)
            gp = np.pad(g, ((0, 0), (0, 0), (q[0], q[0]), (q[1], q[1]))) if q != (0, 0) else g
            flipped = np.ascontiguousarray(kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            x._accumulate(_correlate(gp, flipped, h, w))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, bw)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2; ties send the gradient to the first cell in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        d = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        d = d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        x._accumulate(d)

    return _node(out, (x,), bw)


def tconv2(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution with a 2x2 kernel at stride 2 (kernel shape in_c, out_c, 2, 2)."""
    n, c, h, w = x.shape
    if kernel.ndim != 4 or kernel.shape[2:] != (2, 2):
        raise ValueError(f"tconv2 kernel must be (in_c, out_c, 2, 2), got {kernel.shape}")
    ic, oc = kernel.shape[:2]
    if ic != c:
        raise ValueError(f"tconv2 channel mismatch: input has {c}, kernel expects {ic}")
    xm = x.data.reshape(n, c, h * w)
    kmat = kernel.data.reshape(c, oc * 4)
    y = np.matmul(kmat.T, xm).reshape(n, oc, 2, 2, h, w)
    out = y.transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, 2 * h, 2 * w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gm = g.reshape(n, oc, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, oc * 4, h * w)
        if kernel.requires_grad:
            kernel._accumulate(np.matmul(xm, gm.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._accumulate(np.matmul(kmat, gm).reshape(x.shape))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, bw)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels):
        return cls(np.zeros(channels, dtype=default_dtype()), np.ones(channels, dtype=default_dtype()))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats, mode: str = "train") -> Tensor:
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm affine params must have shape ({c},), got {gamma.shape}, {beta.shape}")
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.var + BN_EPS)
        xhat = (x.data - state.mean[None, :, None, None]) * inv[None, :, None, None]
    elif mode == "train":
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
        unbiased = var * m / (m - 1) if m > 1 else var
        state.mean[:] = (1 - BN_MOMENTUM) * state.mean + BN_MOMENTUM * mean
        state.var[:] = (1 - BN_MOMENTUM) * state.var + BN_MOMENTUM * unbiased
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * gamma.data[None, :, None, None]
            if mode == "eval":
                x._accumulate(gx * inv[None, :, None, None])
            else:
                s1 = gx.mean(axis=(0, 2, 3))[None, :, None, None]
                s2 = (gx * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
                x._accumulate((gx - s1 - xhat * s2) * inv[None, :, None, None])

    return _node(out, (x, gamma, beta), bw)
