"""Mask prediction from visual and spectral features, IBM targets, and BCE."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import ops
from .autodiff.nn import Module
from .autodiff.tensor import Tensor, as_tensor
from .errors import DimensionError

INSTRUMENTS = ("cello", "doublebass", "guitar", "saxophone", "violin")


class FusionParams(Module):
    """Learnable per-channel weights ``alpha`` (length K) and scalar bias ``beta``."""

    def __init__(self, K: int, alpha: float = 1.0, beta: float = 0.0):
        self.alpha = Tensor(np.full(K, float(alpha)), True)
        self.beta = Tensor(np.array([float(beta)]), True)

    @property
    def K(self) -> int:
        return self.alpha.size


def one_hot(instrument: str) -> np.ndarray:
    """Label-conditioning vector over the fixed instrument order."""
    if instrument not in INSTRUMENTS:
        raise ValueError(f"unknown instrument {instrument!r}; expected one of {INSTRUMENTS}")
    h = np.zeros(len(INSTRUMENTS))
    h[INSTRUMENTS.index(instrument)] = 1.0
    return h


def fuse_logits(v, S: Tensor, params: FusionParams) -> Tensor:
    """Pre-sigmoid mask ``sum_k alpha_k v_k S_k + beta``.

    ``v`` is ``[B, N, K]`` (N conditioning vectors per mixture) and ``S`` is
    ``[B, K, H, W]``; the result is ``[B, N, H, W]``.
    """
    v = as_tensor(v)
    if v.shape[-1] != S.shape[1] or v.shape[-1] != params.K:
        raise DimensionError(
            f"conditioning length {v.shape[-1]} vs spectral channels {S.shape[1]} "
            f"vs fusion K {params.K}"
        )
    w = ops.mul(v, params.alpha)
    return ops.add(ops.channel_combine(w, S), params.beta)


def fuse(v, S: Tensor, params: FusionParams) -> Tensor:
    """Predicted mask in (0, 1).

    Accepts either batched inputs (``v`` [B,N,K], ``S`` [B,K,H,W]) or a single
    vector ``v`` [K] with ``S`` [K,H,W], returning [H,W].
    """
    v = as_tensor(v)
    if v.ndim == 1:
        if S.ndim != 3:
            raise DimensionError(f"single-vector fuse expects S as [K,H,W], got {S.shape}")
        k, h, w = S.shape
        z = fuse_logits(ops.reshape(v, (1, 1, -1)), ops.reshape(S, (1, k, h, w)), params)
        return ops.reshape(ops.sigmoid(z), (h, w))
    return ops.sigmoid(fuse_logits(v, S, params))


def ideal_binary_mask(source_mags: Sequence[np.ndarray], i: int) -> np.ndarray:
    """1 where source ``i`` is at least as loud as every other source (ties -> 1)."""
    mags = [np.abs(np.asarray(m)).astype(np.float64) for m in source_mags]
    if not mags:
        raise ValueError("need at least one source magnitude")
    shape = mags[0].shape
    for m in mags:
        if m.shape != shape:
            raise DimensionError(f"source magnitudes differ in shape: {shape} vs {m.shape}")
    stack = np.stack(mags)
    return (stack[i] >= stack.max(axis=0)).astype(np.float64)


def ideal_binary_masks(source_mags: Sequence[np.ndarray]) -> np.ndarray:
    """All N masks stacked as ``[N, ...]``."""
    return np.stack([ideal_binary_mask(source_mags, i) for i in range(len(source_mags))])


bce_loss = ops.bce_loss
