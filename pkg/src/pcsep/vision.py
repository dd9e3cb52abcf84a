"""Sparse ResNet18 that turns point-cloud frames into a conditioning vector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .autodiff import ops
from .autodiff.nn import Module
from .autodiff.tensor import Tensor
from .errors import ConfigError, DimensionError, EmptyInputError
from .sparse import (
    SparseBatchNorm,
    SparseConv3d,
    SparseTensor3,
    batch_sparse,
    global_maxpool,
    sparse_add,
    sparse_relu,
)


@dataclass
class VisionConfig:
    base_channels: int = 16
    K: int = 16
    stage_block_counts: Tuple[int, ...] = (2, 2, 2, 2)
    feature_source: str = "depth"
    in_channels: int = 3

    def __post_init__(self):
        if self.K < 1 or self.base_channels < 1:
            raise ConfigError("vision K and base_channels must be >= 1")
        if self.feature_source not in ("depth", "rgb"):
            raise ConfigError(f"feature_source must be depth or rgb, got {self.feature_source!r}")
        self.stage_block_counts = tuple(self.stage_block_counts)


@dataclass
class VisualFeature:
    """Conditioning vector ``v`` (in [0,1]^K) and the per-frame vectors it pools."""

    v: Tensor
    per_frame: Tensor


class ResidualBlock(Module):
    """relu(bn(conv(relu(bn(conv(x))))) + shortcut(x)).

    The shortcut is the identity unless the block strides or changes width,
    in which case it is a 1x1x1 strided sparse conv followed by batch norm.
    """

    def __init__(self, rng, c_in: int, c_out: int, stride: int = 1):
        if stride not in (1, 2):
            raise ConfigError(f"residual block stride must be 1 or 2, got {stride}")
        self.conv1 = SparseConv3d(rng, c_in, c_out, 3, stride)
        self.bn1 = SparseBatchNorm(c_out)
        self.conv2 = SparseConv3d(rng, c_out, c_out, 3, 1)
        self.bn2 = SparseBatchNorm(c_out)
        self.c_in = c_in
        if stride != 1 or c_in != c_out:
            self.down_conv = SparseConv3d(rng, c_in, c_out, 1, stride)
            self.down_bn = SparseBatchNorm(c_out)
        else:
            self.down_conv = None
            self.down_bn = None

    def __call__(self, x: SparseTensor3) -> SparseTensor3:
        if x.channel_count != self.c_in:
            raise DimensionError(f"residual block expects {self.c_in} channels, got {x.channel_count}")
        h = sparse_relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return sparse_relu(sparse_add(h, skip))


class SparseResNet18(Module):
    """Stem, four stages of residual blocks, a 3x3x3 conv to K channels, global max."""

    def __init__(self, config: VisionConfig, rng: np.random.Generator):
        self.config = config
        b = config.base_channels
        self.stem_conv = SparseConv3d(rng, config.in_channels, b, 3, 1)
        self.stem_bn = SparseBatchNorm(b)
        blocks: List[ResidualBlock] = []
        c_in = b
        for stage, count in enumerate(config.stage_block_counts):
            c_out = b * 2 ** stage
            for i in range(count):
                stride = 2 if (stage > 0 and i == 0) else 1
                blocks.append(ResidualBlock(rng, c_in, c_out, stride))
                c_in = c_out
        self.blocks = blocks
        self.head = SparseConv3d(rng, c_in, config.K, 3, 1, bias=True)

    def trunk(self, x: SparseTensor3) -> SparseTensor3:
        h = sparse_relu(self.stem_bn(self.stem_conv(x)))
        for block in self.blocks:
            h = block(h)
        return self.head(h)

    def encode_frames(self, frames: Sequence[SparseTensor3]) -> Tensor:
        """Encode single-item frames together (shared batch statistics) -> [F, K]."""
        if not frames:
            raise EmptyInputError("no frames to encode")
        for f in frames:
            if len(f) == 0:
                raise EmptyInputError("cannot encode an empty frame")
        x = frames[0] if len(frames) == 1 else batch_sparse(frames)
        return global_maxpool(self.trunk(x))

    def encode_frame(self, frame: SparseTensor3) -> Tensor:
        return ops.reshape(self.encode_frames([frame]), (self.config.K,))

    def encode_videos(self, videos: Sequence[Sequence[SparseTensor3]]) -> VisualFeature:
        """Encode V videos of F frames each -> v [V, K], per_frame [V, F, K]."""
        if not videos or any(len(v) == 0 for v in videos):
            raise EmptyInputError("each video needs at least one frame")
        n_frames = len(videos[0])
        if any(len(v) != n_frames for v in videos):
            raise DimensionError("all videos in a batch must have the same frame count")
        flat = [f for video in videos for f in video]
        per_frame = ops.reshape(self.encode_frames(flat), (len(videos), n_frames, self.config.K))
        v = ops.sigmoid(ops.max_axis(per_frame, 1))
        return VisualFeature(v, per_frame)

    def encode_video(self, frames: Sequence[SparseTensor3]) -> VisualFeature:
        feat = self.encode_videos([frames])
        return VisualFeature(ops.reshape(feat.v, (self.config.K,)),
                             ops.reshape(feat.per_frame, feat.per_frame.shape[1:]))
