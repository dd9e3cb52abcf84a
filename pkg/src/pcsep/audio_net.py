"""U-Net over the log-frequency mixture magnitude."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .autodiff import ops
from .autodiff.nn import BatchNorm, Conv2d, Module
from .autodiff.tensor import Tensor
from .errors import ConfigError, DimensionError


@dataclass
class UNetConfig:
    levels: int = 7
    K: int = 16
    base_channels: int = 8
    max_multiplier: int = 8

    def __post_init__(self):
        if self.levels < 1 or self.K < 1 or self.base_channels < 1:
            raise ConfigError("U-Net levels, K and base_channels must be >= 1")

    def channels(self, level: int) -> int:
        """Width of encoder level ``level`` (1-based); level 0 is the top decoder width."""
        if level == 0:
            return self.base_channels
        return self.base_channels * min(2 ** (level - 1), self.max_multiplier)


class _Down(Module):
    def __init__(self, rng, c_in, c_out):
        self.conv = Conv2d(rng, c_in, c_out, 4, stride=2, padding=1)
        self.bn = BatchNorm(c_out)

    def __call__(self, x):
        return ops.leaky_relu(self.bn(self.conv(x)))


class _Up(Module):
    def __init__(self, rng, c_in, c_out):
        self.conv = Conv2d(rng, c_in, c_out, 3, stride=1, padding=1)
        self.bn = BatchNorm(c_out)

    def __call__(self, x):
        return ops.relu(self.bn(self.conv(ops.upsample_nearest(x, 2))))


class UNet(Module):
    """Encoder: ``levels`` x (4x4 stride-2 conv, bn, leaky relu 0.2).

    Decoder: ``levels`` x (nearest x2 upsample, 3x3 conv, bn, relu), each
    followed by concatenation with the encoder map of the same size (encoder
    levels ``levels-1 .. 1``).  A final linear 3x3 conv gives K channels at
    input resolution.
    """

    def __init__(self, config: UNetConfig, rng: np.random.Generator):
        self.config = config
        c = config.channels
        self.down = [_Down(rng, 1 if l == 1 else c(l - 1), c(l)) for l in range(1, config.levels + 1)]
        ups = []
        c_in = c(config.levels)
        for l in range(config.levels, 0, -1):
            c_out = c(l - 1)
            ups.append(_Up(rng, c_in, c_out))
            c_in = c_out + (c(l - 1) if l - 1 >= 1 else 0)
        self.up = ups
        self.out_conv = Conv2d(rng, c_in, config.K, 3, stride=1, padding=1, bias=True)

    def skip_plan(self) -> List[Tuple[int, int]]:
        """(decoder step, encoder level) pairs joined by concatenation."""
        L = self.config.levels
        return [(step, L - 1 - step) for step in range(L) if L - 1 - step >= 1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise DimensionError(f"U-Net expects [B,1,H,W] input, got {x.shape}")
        div = 2 ** self.config.levels
        if x.shape[2] % div or x.shape[3] % div:
            raise DimensionError(
                f"U-Net input spatial size {x.shape[2:]} not divisible by 2^{self.config.levels}"
            )
        enc = [x]
        for block in self.down:
            enc.append(block(enc[-1]))
        h = enc[-1]
        skips = dict((step, level) for step, level in self.skip_plan())
        for step, block in enumerate(self.up):
            h = block(h)
            if step in skips:
                h = ops.concat_channels([h, enc[skips[step]]])
        return self.out_conv(h)
