"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import GradTape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(
    f: Callable[[], float],
    t: Tensor,
    h: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``t`` at flat ``indices``."""
    flat = t.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    h: float = 1e-5,
    samples: Optional[int] = 20,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-8,
) -> Dict[str, float]:
    """Compare tape gradients against central differences.

    ``loss_fn`` must rebuild the forward pass from the current tensor values
    and return a scalar.  At most ``samples`` random entries per tensor are
    probed (all when ``None``).  Returns max relative error per tensor name.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.grad = None
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)

    def f():
        return float(loss_fn().data)

    errors = {}
    for name, t in tensors.items():
        n = t.size
        if samples is None or samples >= n:
            idx = list(range(n))
        else:
            idx = list(rng.choice(n, size=samples, replace=False))
        analytic = (t.grad if t.grad is not None else np.zeros(t.shape)).reshape(-1)[idx]
        numeric = numeric_grad(f, t, h, idx)
        errors[name] = relative_error(analytic, numeric, floor)
    return errors
