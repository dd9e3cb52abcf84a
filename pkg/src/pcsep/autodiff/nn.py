"""Minimal parameter containers.

Parameters are discovered by walking instance attributes in definition order,
so names are stable across runs and usable as checkpoint keys.
"""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import ops
from .tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Centered uniform init with bound ``sqrt(6 / fan_in)``."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    training = True

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module, ops.RunningStats)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        out = {}
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def named_stats(self, prefix: str = "") -> Dict[str, "ops.RunningStats"]:
        out = {}
        for name, value in self._children():
            if isinstance(value, ops.RunningStats):
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_stats(f"{prefix}{name}."))
        return out

    def named_buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, st in self.named_stats().items():
            out[f"{name}.mean"] = st.mean
            out[f"{name}.var"] = st.var
        return out

    def _modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value._modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self._modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({f"buffer:{k}": v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            arr = state[name]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = np.array(arr, dtype=np.float64)
        for name, st in self.named_stats().items():
            st.mean = np.array(state[f"buffer:{name}.mean"], dtype=np.float64)
            st.var = np.array(state[f"buffer:{name}.var"], dtype=np.float64)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, padding=0, bias=False):
        self.weight = Tensor(uniform_fan_in(rng, (c_out, c_in, k, k), c_in * k * k), True)
        self.bias = Tensor(np.zeros((1, c_out, 1, 1)), True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, self.stride, self.padding)
        return ops.add(y, self.bias) if self.bias is not None else y


class BatchNorm(Module):
    """Batch norm over all non-channel axes; works for [B,C,H,W] and [M,C]."""

    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), True)
        self.beta = Tensor(np.zeros(channels), True)
        self.stats = ops.RunningStats(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.stats, self.training)
