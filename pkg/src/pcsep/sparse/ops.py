"""Differentiable operations on :class:`SparseTensor3` features."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import Module, uniform_fan_in
from ..autodiff.tensor import Tensor, make_result
from ..errors import DimensionError, EmptyInputError
from .tensor import SparseTensor3


def _half_extent(weight: Tensor) -> int:
    n = weight.shape[0]
    side = int(round(n ** (1.0 / 3.0)))
    if side ** 3 != n or side % 2 == 0:
        raise DimensionError(f"sparse kernel axis 0 must be (2L+1)^3, got {n}")
    return side // 2


def sparse_conv3d(x: SparseTensor3, weight: Tensor, stride: int = 1,
                  bias: Optional[Tensor] = None) -> SparseTensor3:
    """Sparse 3-D correlation ``out[p] = sum_d W[d]^T in[stride*p + d]``.

    ``weight`` has shape ``((2L+1)^3, C_in, C_out)``.  With ``stride`` 1 the
    output coordinates are the input coordinates; otherwise they are the
    unique ``floor(c / stride)`` of the input coordinates.
    """
    if stride < 1:
        raise ValueError(f"sparse_conv3d: stride must be >= 1, got {stride}")
    if weight.ndim != 3 or weight.shape[1] != x.channel_count:
        raise DimensionError(
            f"sparse_conv3d: kernel in-channels {weight.shape[1:2]} != input channels {x.channel_count}"
        )
    half = _half_extent(weight)
    out_set = x.coordset.downsample(stride)
    kmap = x.coordset.kernel_map(out_set, half, stride)
    f, w = x.feats.data, weight.data
    out = np.zeros((len(out_set), w.shape[2]))
    for k, (ii, oi) in enumerate(kmap.pairs):
        if len(ii):
            out[oi] += f[ii] @ w[k]
    feats_in = x.feats

    def back(g):
        df = np.zeros_like(f) if feats_in.requires_grad else None
        dw = np.zeros_like(w) if weight.requires_grad else None
        for k, (ii, oi) in enumerate(kmap.pairs):
            if not len(ii):
                continue
            go = g[oi]
            if dw is not None:
                dw[k] = f[ii].T @ go
            if df is not None:
                # each input row appears at most once per offset
                df[ii] += go @ w[k].T
        return df, dw

    y = make_result(out, (feats_in, weight), back)
    if bias is not None:
        y = ops.add(y, bias)
    return SparseTensor3(out_set, y, x.voxel_size * stride)


def sparse_batchnorm(x: SparseTensor3, gamma: Tensor, beta: Tensor, stats: ops.RunningStats,
                     training: bool) -> SparseTensor3:
    """Per-channel normalisation over every occupied voxel of the whole batch."""
    if len(x) == 0:
        raise EmptyInputError("sparse_batchnorm on an empty tensor")
    return x.with_feats(ops.batchnorm(x.feats, gamma, beta, stats, training))


def sparse_relu(x: SparseTensor3) -> SparseTensor3:
    return x.with_feats(ops.relu(x.feats))


def sparse_add(a: SparseTensor3, b: SparseTensor3) -> SparseTensor3:
    if a.coordset is not b.coordset:
        if len(a) != len(b) or not (np.array_equal(a.coords, b.coords) and np.array_equal(a.batch, b.batch)):
            raise DimensionError("sparse_add: coordinate sets differ")
    return a.with_feats(ops.add(a.feats, b.feats))


def global_maxpool(x: SparseTensor3) -> Tensor:
    """Per-batch-item, per-channel max over occupied voxels -> ``[B, C]``.

    The gradient goes to the first (canonical order) argmax voxel.
    """
    if len(x) == 0:
        raise EmptyInputError("global_maxpool on an empty tensor")
    f = x.feats.data
    batch = x.batch
    starts = np.flatnonzero(np.r_[True, batch[1:] != batch[:-1]])
    if len(starts) != x.num_batches:
        raise EmptyInputError("every batch item needs at least one occupied voxel")
    ends = np.r_[starts[1:], len(f)]
    arg = np.stack([s + np.argmax(f[s:e], axis=0) for s, e in zip(starts, ends)])
    cols = np.arange(f.shape[1])
    out = f[arg, cols[None, :]]

    def back(g):
        d = np.zeros_like(f)
        np.add.at(d, (arg, np.broadcast_to(cols, arg.shape)), g)
        return (d,)

    return make_result(out, (x.feats,), back)


class SparseConv3d(Module):
    """Sparse convolution layer; weights indexed by kernel offset."""

    def __init__(self, rng, c_in: int, c_out: int, kernel_size: int = 3, stride: int = 1,
                 bias: bool = False):
        if kernel_size % 2 == 0:
            raise ValueError("sparse kernel size must be odd")
        taps = kernel_size ** 3
        self.weight = Tensor(uniform_fan_in(rng, (taps, c_in, c_out), taps * c_in), True)
        self.bias = Tensor(np.zeros(c_out), True) if bias else None
        self.stride = stride

    def __call__(self, x: SparseTensor3) -> SparseTensor3:
        return sparse_conv3d(x, self.weight, self.stride, self.bias)


class SparseBatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), True)
        self.beta = Tensor(np.zeros(channels), True)
        self.stats = ops.RunningStats(channels)

    def __call__(self, x: SparseTensor3) -> SparseTensor3:
        return sparse_batchnorm(x, self.gamma, self.beta, self.stats, self.training)
