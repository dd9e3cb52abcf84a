"""Differentiable operations on :class:`~pcsep.autodiff.tensor.Tensor`.

Convolutions use the channel-first "shifted matmul" formulation: for every
kernel tap the strided input window is flattened to ``(C, B*H'*W')`` and hit
with one ``(C', C)`` matrix product.  That avoids materialising a full
im2col matrix, which matters at 256x256 on one CPU core.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.2
BCE_CLAMP = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), back)


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def max_axis(x: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; ties route the gradient to the lowest index."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (dx,)

    return make_result(out, (x,), back)


# -- activations -------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- convolution -------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _tap(arr: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> np.ndarray:
    # strided window of a (C, B, Hp, Wp) array for kernel tap (i, j)
    return arr[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _check_conv(x: Tensor, kernel: Tensor, in_axis: int, op: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{op}: input must be 4-D [B,C,H,W], got shape {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"{op}: kernel must be 4-D, got shape {kernel.shape}")
    if x.shape[1] != kernel.shape[in_axis]:
        raise DimensionError(
            f"{op}: input channel axis 1 has size {x.shape[1]} but kernel axis "
            f"{in_axis} has size {kernel.shape[in_axis]}"
        )


_BLOCK = 16384


def _phase_split(xp: np.ndarray, s: int, kh: int, kw: int):
    """Split a padded (C, B, Hp, Wp) array into its stride phases, each flattened to (C, L).

    A stride-``s`` correlation becomes a sum of stride-1 shifted products over
    the phase images, and every shift is a contiguous slice of the flat rows.
    """
    c, b, hp, wp = xp.shape
    hq, wq = -(-hp // s), -(-wp // s)
    if (hq * s, wq * s) != (hp, wp):
        xp = np.pad(xp, ((0, 0), (0, 0), (0, hq * s - hp), (0, wq * s - wp)))
    phases = {}
    for pi in range(min(s, kh)):
        for pj in range(min(s, kw)):
            phases[pi, pj] = np.ascontiguousarray(xp[:, :, pi::s, pj::s]).reshape(c, -1)
    return phases, hq, wq


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``kernel`` is ``[C_out, C_in, kh, kw]``.

    Computed per kernel tap as a matmul on shifted flat views, in column
    blocks small enough to stay in cache.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv(x, kernel, 1, "conv2d")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    b, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    for axis, n, k in ((2, h, kh), (3, w, kw)):
        if k > n + 2 * padding:
            raise DimensionError(
                f"conv2d: kernel extent {k} exceeds padded input axis {axis} ({n + 2 * padding})"
            )
    s = stride
    ho, wo = _out_size(h, kh, s, padding), _out_size(w, kw, s, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))).transpose(1, 0, 2, 3)
    hp, wp = xp.shape[2], xp.shape[3]
    phases, hq, wq = _phase_split(xp, s, kh, kw)
    length = b * hq * wq
    m = length - (((kh - 1) // s) * wq + (kw - 1) // s)
    kd = kernel.data
    taps = [(i, j, phases[i % s, j % s], (i // s) * wq + j // s) for i in range(kh) for j in range(kw)]
    kt = {(i, j): np.ascontiguousarray(kd[:, :, i, j]) for i, j, _, _ in taps}
    out = np.zeros((o, length))
    tmp = np.empty((o, min(_BLOCK, m)))
    for st in range(0, m, _BLOCK):
        n = min(_BLOCK, m - st)
        ob, t = out[:, st:st + n], tmp[:, :n]
        for i, j, ph, sh in taps:
            np.matmul(kt[i, j], ph[:, st + sh:st + sh + n], out=t)
            ob += t
    y = np.ascontiguousarray(out.reshape(o, b, hq, wq)[:, :, :ho, :wo].transpose(1, 0, 2, 3))

    def back(g):
        gfull = np.zeros((o, b, hq, wq))
        gfull[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gm = gfull.reshape(o, length)
        dk = np.zeros_like(kd) if kernel.requires_grad else None
        dph = {key: np.zeros_like(v) for key, v in phases.items()} if x.requires_grad else None
        tmp_c = np.empty((c, min(_BLOCK, m)))
        for st in range(0, m, _BLOCK):
            n = min(_BLOCK, m - st)
            gb = gm[:, st:st + n]
            for i, j, ph, sh in taps:
                if dk is not None:
                    dk[:, :, i, j] += gb @ ph[:, st + sh:st + sh + n].T
                if dph is not None:
                    t = tmp_c[:, :n]
                    np.matmul(kt[i, j].T, gb, out=t)
                    dph[i % s, j % s][:, st + sh:st + sh + n] += t
        dx = None
        if dph is not None:
            dxp = np.zeros((c, b, hq * s, wq * s))
            for (pi, pj), v in dph.items():
                dxp[:, :, pi::s, pj::s] = v.reshape(c, b, hq, wq)
            dx = dxp[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
        return dx, dk

    return make_result(y, (x, kernel), back)


def conv2d_transpose(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` for the same ``kernel`` (``[C_a, C_b, kh, kw]``).

    The input carries ``C_a`` channels and the output ``C_b``; the output
    spatial size is ``(H-1)*stride - 2*padding + kh``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv(x, kernel, 0, "conv2d_transpose")
    if stride < 1:
        raise ValueError(f"conv2d_transpose: stride must be >= 1, got {stride}")
    b, o, h, w = x.shape
    _, c, kh, kw = kernel.shape
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    if hf - 2 * padding < 1 or wf - 2 * padding < 1:
        raise DimensionError(f"conv2d_transpose: padding {padding} leaves an empty output")
    kd = kernel.data
    xm = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(o, -1)
    full = np.zeros((c, b, hf, wf))
    for i in range(kh):
        for j in range(kw):
            _tap(full, i, j, h, w, stride)[...] += (kd[:, :, i, j].T @ xm).reshape(c, b, h, w)
    y = full[:, :, padding:hf - padding, padding:wf - padding].transpose(1, 0, 2, 3)

    def back(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        gp = np.ascontiguousarray(gp.transpose(1, 0, 2, 3))
        dx = np.zeros((o, b * h * w)) if x.requires_grad else None
        dk = np.zeros_like(kd) if kernel.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                patch = _tap(gp, i, j, h, w, stride).reshape(c, -1)
                if dx is not None:
                    dx += kd[:, :, i, j] @ patch
                if dk is not None:
                    dk[:, :, i, j] = xm @ patch.T
        if dx is not None:
            dx = dx.reshape(o, b, h, w).transpose(1, 0, 2, 3)
        return dx, dk

    return make_result(np.ascontiguousarray(y), (x, kernel), back)


# -- normalisation -----------------------------------------------------------

class RunningStats:
    """Running mean/variance buffers for batch normalisation."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Batch normalisation over every axis except axis 1 (channels)."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[1] != gamma.size or x.shape[1] != beta.size:
        raise DimensionError(
            f"batchnorm: channel axis 1 of input {x.shape} does not match "
            f"gamma/beta length {gamma.size}/{beta.size}"
        )
    axes = tuple(a for a in range(x.ndim) if a != 1)
    bshape = [1] * x.ndim
    bshape[1] = -1
    n = x.size // x.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.mean = (1.0 - momentum) * stats.mean + momentum * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        stats.var = (1.0 - momentum) * stats.var + momentum * unbiased
    else:
        mu, var = stats.mean, stats.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    g_ = gamma.data.reshape(bshape)
    y = g_ * xhat + beta.data.reshape(bshape)

    def back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if training:
            dx = (inv_std.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return make_result(y, (x, gamma, beta), back)


# -- pooling / resampling / concatenation -----------------------------------

def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    b, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"maxpool2d: spatial axes 2,3 ({h},{w}) not divisible by {k}")
    blocks = x.data.reshape(b, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, h // k, w // k, k * k)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def back(g):
        d = np.zeros(blocks.shape)
        np.put_along_axis(d, idx[..., None], g[..., None], axis=-1)
        d = d.reshape(b, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (d.reshape(b, c, h, w),)

    return make_result(out, (x,), back)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_result(out, (x,), back)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = [as_tensor(t) for t in inputs]
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[:1] + t.shape[2:] != ref[:1] + ref[2:]:
            raise DimensionError(
                f"concat_channels: non-channel axes differ ({ref} vs {t.shape})"
            )
    sizes = [t.shape[1] for t in inputs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=1))

    return make_result(np.concatenate([t.data for t in inputs], axis=1), inputs, back)


# -- fusion / loss helpers ---------------------------------------------------

def channel_combine(w: Tensor, s: Tensor) -> Tensor:
    """``out[b,n,h,w] = sum_k w[b,n,k] * s[b,k,h,w]``."""
    if w.ndim != 3 or s.ndim != 4 or w.shape[0] != s.shape[0] or w.shape[2] != s.shape[1]:
        raise DimensionError(
            f"channel_combine: weights {w.shape} incompatible with features {s.shape}"
        )
    out = np.einsum("bnk,bkhw->bnhw", w.data, s.data)

    def back(g):
        dw = np.einsum("bnhw,bkhw->bnk", g, s.data) if w.requires_grad else None
        ds = np.einsum("bnk,bnhw->bkhw", w.data, g) if s.requires_grad else None
        return dw, ds

    return make_result(out, (w, s), back)


def bce_loss(p: Tensor, target, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean binary cross entropy; ``p`` is clamped to ``[clamp, 1-clamp]``.

    The gradient is evaluated at the clamped probability and passed straight
    through the clamp, so saturated wrong predictions still receive a signal.
    """
    y = np.asarray(target, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError(f"bce_loss: prediction {p.shape} vs target {y.shape}")
    pc = np.clip(p.data, clamp, 1.0 - clamp)
    n = pc.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean()

    def back(g):
        return (g * (-y / pc + (1.0 - y) / (1.0 - pc)) / n,)

    return make_result(np.asarray(loss), (p,), back)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)

    def back(g):
        d = np.zeros_like(x.data)
        np.add.at(d, idx, g)
        return (d,)

    return make_result(x.data[idx], (x,), back)


def stack(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    inputs = [as_tensor(t) for t in inputs]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(inputs)))

    return make_result(np.stack([t.data for t in inputs], axis=axis), inputs, back)


def dot(a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Full inner product ``sum(a*b)`` (``b`` defaults to ``a``)."""
    return reduce_sum(mul(a, a if b is None else b))
