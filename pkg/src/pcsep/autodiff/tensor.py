"""Dense float64 tensors and the gradient tape.

Operations only record themselves while a :class:`GradTape` is active and at
least one input requires a gradient; outside a tape every op is a plain
numpy computation.  This doubles as the "no-grad" mode used for evaluation.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NumericalError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An N-dimensional float64 array that can carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar; the ops module imports this one, so import lazily.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_ACTIVE: list = []


class GradTape:
    """Ordered record of differentiable operations.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on the scalar loss.  The tape is cleared afterwards, so a
    fresh forward pass is needed for the next step.
    """

    def __init__(self):
        self.records: list = []

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records = []

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ContractError("backward called on an empty tape")
        grads = {id(loss): np.ones_like(loss.data)}
        seen = {}
        produced = set()
        for rec in self.records:
            produced.add(id(rec.output))
            for t in rec.inputs:
                if t.requires_grad:
                    seen[id(t)] = t
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, g in grads.items():
            if key in produced or key not in seen:
                continue
            leaf = seen[key]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {leaf!r}")
            g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        self.clear()


def current_tape() -> Optional[GradTape]:
    return _ACTIVE[-1] if _ACTIVE else None


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op output, checking finiteness and recording it when needed."""
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericalError("non-finite values produced in forward pass")
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(tuple(inputs), out, backward))
    return out


def backward(loss: Tensor, tape: Optional[GradTape] = None) -> None:
    """Backpropagate ``loss`` through ``tape`` (default: the innermost active tape)."""
    tape = tape or current_tape()
    if tape is None:
        raise ContractError("backward called without an active GradTape")
    tape.backward(loss)
