from . import ops
from .nn import BatchNorm, Conv2d, Module
from .ops import (
    activation,
    batchnorm,
    bce_loss,
    concat_channels,
    conv2d,
    conv2d_transpose,
    maxpool2d,
    upsample_nearest,
)
from .tensor import GradTape, Tensor, backward

__all__ = [
    "BatchNorm",
    "Conv2d",
    "GradTape",
    "Module",
    "Tensor",
    "activation",
    "backward",
    "batchnorm",
    "bce_loss",
    "concat_channels",
    "conv2d",
    "conv2d_transpose",
    "maxpool2d",
    "ops",
    "upsample_nearest",
]
