"""Finite-difference gradient suite over every differentiable op and the micro networks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .audio_net import UNet, UNetConfig
from .autodiff import Tensor, ops
from .autodiff.gradcheck import check_gradients
from .fusion import FusionParams, fuse
from .sparse import (
    SparseTensor3,
    batch_sparse,
    global_maxpool,
    sparse_add,
    sparse_batchnorm,
    sparse_conv3d,
    sparse_relu,
)
from .vision import SparseResNet18, VisionConfig

OP_TOL = 1e-4
NET_TOL = 1e-3


@dataclass
class GradResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _away_from_zero(rng, *shape, margin=0.05):
    x = rng.normal(size=shape)
    return Tensor(np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x), requires_grad=True)


def _sparse(rng, n=30, channels=3, extent=7):
    cells = np.array(list(itertools.product(range(extent), repeat=3)))
    pick = rng.choice(len(cells), size=n, replace=False)
    x = SparseTensor3.from_arrays(cells[pick], rng.normal(size=(n, channels)))
    x.feats.requires_grad = True
    return x


def _weighted(t: Tensor, rng) -> Tensor:
    r = Tensor(rng.normal(size=t.shape))
    return ops.reduce_sum(ops.mul(t, r))


def _op_cases(rng) -> Dict[str, Callable]:
    cases = {}

    def case(name):
        def deco(fn):
            cases[name] = fn
            return fn
        return deco

    @case("add")
    def _():
        a, b = _t(rng, 3, 4), _t(rng, 1, 4)
        return lambda: _weighted(ops.add(a, b), np.random.default_rng(1)), {"a": a, "b": b}

    @case("sub")
    def _():
        a, b = _t(rng, 3, 4), _t(rng, 3, 1)
        return lambda: _weighted(ops.sub(a, b), np.random.default_rng(1)), {"a": a, "b": b}

    @case("mul")
    def _():
        a, b = _t(rng, 2, 3, 4), _t(rng, 4)
        return lambda: _weighted(ops.mul(a, b), np.random.default_rng(1)), {"a": a, "b": b}

    @case("square")
    def _():
        a = _t(rng, 5)
        return lambda: _weighted(ops.square(a), np.random.default_rng(1)), {"a": a}

    @case("reduce_sum")
    def _():
        a = _t(rng, 3, 4)
        return lambda: _weighted(ops.reduce_sum(a, axis=1), np.random.default_rng(1)), {"a": a}

    @case("mean")
    def _():
        a = _t(rng, 3, 4)
        return lambda: _weighted(ops.mean(a, axis=0, keepdims=True), np.random.default_rng(1)), {"a": a}

    @case("reshape")
    def _():
        a = _t(rng, 3, 4)
        return lambda: _weighted(ops.reshape(a, (2, 6)), np.random.default_rng(1)), {"a": a}

    @case("max_axis")
    def _():
        a = Tensor(rng.permutation(24).reshape(2, 3, 4) * 0.1, requires_grad=True)
        return lambda: _weighted(ops.max_axis(a, 1), np.random.default_rng(1)), {"a": a}

    @case("relu")
    def _():
        a = _away_from_zero(rng, 4, 5)
        return lambda: _weighted(ops.relu(a), np.random.default_rng(1)), {"a": a}

    @case("leaky_relu")
    def _():
        a = _away_from_zero(rng, 4, 5)
        return lambda: _weighted(ops.leaky_relu(a), np.random.default_rng(1)), {"a": a}

    @case("sigmoid")
    def _():
        a = _t(rng, 4, 5, scale=2.0)
        return lambda: _weighted(ops.sigmoid(a), np.random.default_rng(1)), {"a": a}

    for s, p in ((1, 1), (2, 1), (2, 0)):
        @case(f"conv2d[s{s}p{p}]")
        def _(s=s, p=p):
            x, k = _t(rng, 2, 3, 8, 8), _t(rng, 4, 3, 3, 3)
            return lambda: _weighted(ops.conv2d(x, k, s, p), np.random.default_rng(1)), {"x": x, "k": k}

    @case("conv2d_transpose")
    def _():
        x, k = _t(rng, 2, 4, 4, 4), _t(rng, 4, 3, 4, 4)
        return lambda: _weighted(ops.conv2d_transpose(x, k, 2, 1), np.random.default_rng(1)), {"x": x, "k": k}

    for training in (True, False):
        @case(f"batchnorm[{'train' if training else 'eval'}]")
        def _(training=training):
            x, g, b = _t(rng, 4, 3, 2, 2), _t(rng, 3), _t(rng, 3)
            stats = ops.RunningStats(3)
            stats.mean, stats.var = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
            return (lambda: _weighted(ops.batchnorm(x, g, b, stats, training), np.random.default_rng(1)),
                    {"x": x, "gamma": g, "beta": b})

    @case("maxpool2d")
    def _():
        a = Tensor(rng.permutation(64).reshape(1, 1, 8, 8) * 0.1, requires_grad=True)
        return lambda: _weighted(ops.maxpool2d(a, 2), np.random.default_rng(1)), {"a": a}

    @case("upsample_nearest")
    def _():
        a = _t(rng, 1, 2, 3, 3)
        return lambda: _weighted(ops.upsample_nearest(a, 2), np.random.default_rng(1)), {"a": a}

    @case("concat_channels")
    def _():
        a, b = _t(rng, 2, 1, 3, 3), _t(rng, 2, 2, 3, 3)
        return lambda: _weighted(ops.concat_channels([a, b]), np.random.default_rng(1)), {"a": a, "b": b}

    @case("channel_combine")
    def _():
        w, s = _t(rng, 2, 3, 4), _t(rng, 2, 4, 3, 3)
        return lambda: _weighted(ops.channel_combine(w, s), np.random.default_rng(1)), {"w": w, "s": s}

    @case("bce_loss")
    def _():
        p = Tensor(rng.uniform(0.05, 0.95, size=(3, 4)), requires_grad=True)
        y = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
        return lambda: ops.bce_loss(p, y), {"p": p}

    @case("take_rows")
    def _():
        a = _t(rng, 5, 3)
        idx = np.array([0, 2, 2, 4])
        return lambda: _weighted(ops.take_rows(a, idx), np.random.default_rng(1)), {"a": a}

    @case("stack")
    def _():
        a, b = _t(rng, 2, 3), _t(rng, 2, 3)
        return lambda: _weighted(ops.stack([a, b], axis=1), np.random.default_rng(1)), {"a": a, "b": b}

    @case("dot")
    def _():
        a, b = _t(rng, 6), _t(rng, 6)
        return lambda: ops.dot(a, b), {"a": a, "b": b}

    @case("fuse")
    def _():
        params = FusionParams(4)
        params.alpha.data = rng.normal(size=4)
        v, s = _t(rng, 2, 2, 4), _t(rng, 2, 4, 3, 3)
        return (lambda: _weighted(fuse(v, s, params), np.random.default_rng(1)),
                {"v": v, "S": s, **params.named_parameters()})

    for stride in (1, 2):
        @case(f"sparse_conv3d[s{stride}]")
        def _(stride=stride):
            x = _sparse(rng)
            w, b = _t(rng, 27, 3, 2), _t(rng, 2)
            def f():
                return _weighted(sparse_conv3d(x, w, stride, b).feats, np.random.default_rng(1))
            return f, {"x": x.feats, "w": w, "b": b}

    @case("sparse_batchnorm")
    def _():
        x = _sparse(rng)
        g, b = _t(rng, 3), _t(rng, 3)
        stats = ops.RunningStats(3)
        return (lambda: _weighted(sparse_batchnorm(x, g, b, stats, True).feats, np.random.default_rng(1)),
                {"x": x.feats, "gamma": g, "beta": b})

    @case("sparse_relu")
    def _():
        x = _sparse(rng)
        x.feats.data = _away_from_zero(rng, *x.feats.shape).data
        return lambda: _weighted(sparse_relu(x).feats, np.random.default_rng(1)), {"x": x.feats}

    @case("sparse_add")
    def _():
        x = _sparse(rng)
        y = x.with_feats(_t(rng, *x.feats.shape))
        return lambda: _weighted(sparse_add(x, y).feats, np.random.default_rng(1)), {"x": x.feats, "y": y.feats}

    @case("global_maxpool")
    def _():
        a, b = _sparse(rng, n=20), _sparse(rng, n=25)
        def f():
            return _weighted(global_maxpool(batch_sparse([a, b])), np.random.default_rng(1))
        return f, {"a": a.feats, "b": b.feats}

    return cases


def _net_cases(rng) -> Dict[str, Callable]:
    def vision():
        net = SparseResNet18(VisionConfig(base_channels=2, K=4), rng)
        frames = [_sparse(rng, n=40, extent=10), _sparse(rng, n=35, extent=10)]
        r = np.random.default_rng(1)
        w = r.normal(size=(1, 4))
        return (lambda: ops.reduce_sum(ops.mul(net.encode_videos([frames]).v, Tensor(w))),
                net.named_parameters())

    def audio():
        net = UNet(UNetConfig(levels=3, K=2, base_channels=2), rng)
        x = _t(rng, 2, 1, 16, 16)
        r = np.random.default_rng(1).normal(size=(2, 2, 16, 16))
        return lambda: ops.reduce_sum(ops.mul(net(x), Tensor(r))), {"x": x, **net.named_parameters()}

    return {"vision-net[micro]": vision, "audio-net[levels=3,16x16]": audio}


def run_suite(seed: int = 0, samples: int = 12, include_nets: bool = True) -> List[GradResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, build in _op_cases(rng).items():
        loss_fn, tensors = build()
        errs = check_gradients(loss_fn, tensors, samples=samples, rng=rng)
        results.append(GradResult(name, max(errs.values()), OP_TOL))
    if include_nets:
        for name, build in _net_cases(rng).items():
            loss_fn, tensors = build()
            errs = check_gradients(loss_fn, tensors, samples=6, rng=rng)
            results.append(GradResult(name, max(errs.values()), NET_TOL))
    return results
