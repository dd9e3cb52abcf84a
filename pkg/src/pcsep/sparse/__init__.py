from .kernel_map import KernelMap, build_kernel_map, kernel_offsets
from .ops import (
    SparseBatchNorm,
    SparseConv3d,
    global_maxpool,
    sparse_add,
    sparse_batchnorm,
    sparse_conv3d,
    sparse_relu,
)
from .pointcloud import PointCloudFrame, read_ply, write_ply
from .tensor import CoordinateSet, SparseTensor3, batch_sparse, voxelize

__all__ = [
    "CoordinateSet",
    "KernelMap",
    "PointCloudFrame",
    "SparseBatchNorm",
    "SparseConv3d",
    "SparseTensor3",
    "batch_sparse",
    "build_kernel_map",
    "global_maxpool",
    "kernel_offsets",
    "read_ply",
    "sparse_add",
    "sparse_batchnorm",
    "sparse_conv3d",
    "sparse_relu",
    "voxelize",
    "write_ply",
]
