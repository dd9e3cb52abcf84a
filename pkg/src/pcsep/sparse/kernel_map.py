"""Kernel maps: per-offset (input row, output row) pairs for sparse convolution.

For kernel half-extent ``L`` and stride ``s`` the pair ``(a, b)`` belongs to
offset ``d = (i, j, k)`` iff ``in[a] == s * out[b] + d`` within the same batch
item.  Offsets are enumerated in row-major order over ``[-L, L]^3``, the same
order as the first axis of a sparse kernel's weight array.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np


def kernel_offsets(half_extent: int) -> np.ndarray:
    r = range(-half_extent, half_extent + 1)
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


@dataclass(frozen=True)
class KernelMap:
    offsets: np.ndarray
    pairs: List[Tuple[np.ndarray, np.ndarray]]
    n_in: int
    n_out: int

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_count(self) -> int:
        return sum(len(a) for a, _ in self.pairs)


def build_kernel_map(in_set, out_set, half_extent: int, stride: int = 1) -> KernelMap:
    """Probe ``stride * out + d`` in the input index for every offset ``d``.

    Runs in ``O(N_out * (2L+1)^3 log N_in)`` via sorted-key lookup; every
    offset is independent of the others.
    """
    offsets = kernel_offsets(half_extent)
    base = out_set.coords.astype(np.int64) * stride
    n_out = len(out_set)
    queries = (base[None, :, :] + offsets[:, None, :]).reshape(-1, 3)
    qbatch = np.tile(out_set.batch.astype(np.int64), len(offsets))
    hits = in_set.lookup(queries, qbatch).reshape(len(offsets), n_out)
    pairs = []
    out_rows = np.arange(n_out)
    for k in range(len(offsets)):
        found = hits[k] >= 0
        pairs.append((hits[k][found], out_rows[found]))
    return KernelMap(offsets, pairs, len(in_set), n_out)
