"""Sparse 3-D tensors: deduplicated integer coordinates plus feature rows.

Coordinates are always stored in canonical order, sorted by
``(batch, x, y, z)``.  Any storage permutation of the input therefore yields
the same tensor, which makes downstream ops bit-reproducible.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..autodiff.tensor import Tensor, as_tensor, make_result
from ..errors import DataError, EmptyInputError
from .kernel_map import KernelMap, build_kernel_map
from .pointcloud import PointCloudFrame

_INT32_LIMIT = 2 ** 31


def _canonical_order(coords: np.ndarray, batch: np.ndarray):
    """Sort rows by (batch, x, y, z); return order, group id per sorted row, starts."""
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], batch))
    c, b = coords[order], batch[order]
    new = np.ones(len(order), dtype=bool)
    new[1:] = np.any(c[1:] != c[:-1], axis=1) | (b[1:] != b[:-1])
    return order, np.cumsum(new) - 1, np.flatnonzero(new)


class CoordinateSet:
    """Canonical, duplicate-free coordinate set with a lookup index.

    Kernel maps and downsampled sets derived from it are cached, so every
    convolution at one resolution reuses the same neighbour search.
    """

    def __init__(self, coords: np.ndarray, batch: np.ndarray):
        self.coords = np.ascontiguousarray(coords, dtype=np.int32).reshape(-1, 3)
        self.batch = np.ascontiguousarray(batch, dtype=np.int32).reshape(-1)
        self._index = None
        self._downsampled = {}
        self._maps = {}

    @classmethod
    def from_points(cls, coords, batch=None):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        batch = np.zeros(len(coords), np.int64) if batch is None else np.asarray(batch, np.int64)
        order, group, starts = _canonical_order(coords, batch)
        uniq = order[starts]
        return cls(coords[uniq], batch[uniq]), order, group

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def num_batches(self) -> int:
        return int(self.batch.max()) + 1 if len(self.batch) else 0

    def _build_index(self):
        c = self.coords.astype(np.int64)
        lo, hi = c.min(axis=0), c.max(axis=0)
        ext = hi - lo + 1
        nb = self.num_batches
        if float(nb) * float(np.prod(ext.astype(float))) < 2.0 ** 62:
            keys = self._keys(c, self.batch.astype(np.int64), lo, ext)
            self._index = ("radix", lo, hi, ext, nb, keys)
        else:
            table = {(int(b), *map(int, row)): i for i, (b, row) in enumerate(zip(self.batch, c))}
            self._index = ("dict", table)

    @staticmethod
    def _keys(c, b, lo, ext):
        return ((b * ext[0] + (c[:, 0] - lo[0])) * ext[1] + (c[:, 1] - lo[1])) * ext[2] + (c[:, 2] - lo[2])

    def lookup(self, coords: np.ndarray, batch: np.ndarray) -> np.ndarray:
        """Row index of each query coordinate, or -1 where unoccupied."""
        if self._index is None:
            self._build_index()
        q = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        qb = np.asarray(batch, dtype=np.int64).reshape(-1)
        out = np.full(len(q), -1, dtype=np.int64)
        if self._index[0] == "dict":
            table = self._index[1]
            for n, (b, row) in enumerate(zip(qb, q)):
                out[n] = table.get((int(b), *map(int, row)), -1)
            return out
        _, lo, hi, ext, nb, keys = self._index
        valid = np.all((q >= lo) & (q <= hi), axis=1) & (qb >= 0) & (qb < nb)
        if not valid.any():
            return out
        k = self._keys(q[valid], qb[valid], lo, ext)
        pos = np.searchsorted(keys, k)
        pos = np.minimum(pos, len(keys) - 1)
        hit = keys[pos] == k
        sub = np.full(len(k), -1, dtype=np.int64)
        sub[hit] = pos[hit]
        out[valid] = sub
        return out

    def downsample(self, stride: int) -> "CoordinateSet":
        """Set of ``floor(c / stride)`` over occupied coordinates."""
        if stride == 1:
            return self
        if stride not in self._downsampled:
            down, _, _ = CoordinateSet.from_points(np.floor_divide(self.coords, stride), self.batch)
            self._downsampled[stride] = down
        return self._downsampled[stride]

    def kernel_map(self, out_set: "CoordinateSet", half_extent: int, stride: int) -> KernelMap:
        key = (id(out_set), half_extent, stride)
        if key not in self._maps:
            self._maps[key] = (out_set, build_kernel_map(self, out_set, half_extent, stride))
        return self._maps[key][1]


class SparseTensor3:
    """Sparse 3-D tensor: coordinate set, one feature row per coordinate."""

    def __init__(self, coordset: CoordinateSet, feats, voxel_size: float = 1.0):
        feats = as_tensor(feats)
        if feats.ndim != 2 or feats.shape[0] != len(coordset):
            raise ValueError(
                f"feature rows {feats.shape} do not match {len(coordset)} coordinates"
            )
        self.coordset = coordset
        self.feats = feats
        self.voxel_size = float(voxel_size)

    @classmethod
    def from_arrays(cls, coords, feats, voxel_size: float = 1.0, batch=None) -> "SparseTensor3":
        """Build from raw rows; duplicate coordinates are merged by averaging."""
        coords = np.asarray(coords)
        if len(coords) == 0:
            raise EmptyInputError("cannot build a sparse tensor from zero points")
        feats = np.asarray(feats, dtype=np.float64).reshape(len(coords), -1)
        cset, order, group = CoordinateSet.from_points(coords, batch)
        sums = np.zeros((len(cset), feats.shape[1]))
        np.add.at(sums, group, feats[order])
        counts = np.bincount(group, minlength=len(cset)).astype(np.float64)
        return cls(cset, Tensor(sums / counts[:, None]), voxel_size)

    @property
    def coords(self) -> np.ndarray:
        return self.coordset.coords

    @property
    def batch(self) -> np.ndarray:
        return self.coordset.batch

    @property
    def channel_count(self) -> int:
        return self.feats.shape[1]

    @property
    def num_batches(self) -> int:
        return self.coordset.num_batches

    def __len__(self) -> int:
        return len(self.coordset)

    def with_feats(self, feats: Tensor) -> "SparseTensor3":
        return SparseTensor3(self.coordset, feats, self.voxel_size)

    def to_dense(self, origin, shape, batch_index: int = 0) -> np.ndarray:
        """Scatter one batch item into a dense ``shape + (C,)`` grid."""
        grid = np.zeros(tuple(shape) + (self.channel_count,))
        sel = self.batch == batch_index
        idx = self.coords[sel] - np.asarray(origin)
        grid[idx[:, 0], idx[:, 1], idx[:, 2]] = self.feats.data[sel]
        return grid


def _snap_floor(q: np.ndarray) -> np.ndarray:
    # values within float round-off of an integer are treated as that integer
    r = np.round(q)
    near = np.abs(q - r) <= 1e-9 * np.maximum(1.0, np.abs(q))
    return np.where(near, r, np.floor(q))


def voxelize(frame: PointCloudFrame, voxel_size: float, feature_source: str = "depth") -> SparseTensor3:
    """Discretise a frame onto the integer grid ``floor(c / voxel_size)``.

    Points falling into the same voxel have their features averaged.
    """
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    if len(frame) == 0:
        raise EmptyInputError("cannot voxelize an empty frame")
    grid = _snap_floor(frame.coordinates / voxel_size)
    if np.any(np.abs(grid) >= _INT32_LIMIT):
        raise DataError("voxel coordinates exceed the 32-bit range; voxel size too small?")
    return SparseTensor3.from_arrays(grid.astype(np.int64), frame.features(feature_source), voxel_size)


def batch_sparse(tensors: Sequence[SparseTensor3]) -> SparseTensor3:
    """Stack single-item sparse tensors into one batch (item i gets batch index i)."""
    if not tensors:
        raise EmptyInputError("no sparse tensors to batch")
    coords = np.concatenate([t.coords for t in tensors])
    batch = np.concatenate([np.full(len(t), i, dtype=np.int32) for i, t in enumerate(tensors)])
    for t in tensors:
        if t.num_batches != 1:
            raise ValueError("batch_sparse expects single-item tensors")
    cset = CoordinateSet(coords, batch)
    sizes = np.cumsum([len(t) for t in tensors])[:-1]
    inputs = [t.feats for t in tensors]

    def back(g):
        return tuple(np.split(g, sizes, axis=0))

    feats = make_result(np.concatenate([t.data for t in inputs]), inputs, back)
    return SparseTensor3(cset, feats, tensors[0].voxel_size)
