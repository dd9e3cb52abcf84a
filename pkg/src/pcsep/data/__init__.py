from .augment import (
    AugmentParams,
    augment_colors,
    augment_coords,
    augment_frame,
    preprocess_frame,
)
from .dataset import Dataset, TrainingItem, sample_training_item
from .manifest import ManifestRow, check_disjoint, read_manifest, split_identities, write_manifest
from .synthetic import make_synthetic

__all__ = [
    "AugmentParams",
    "Dataset",
    "ManifestRow",
    "TrainingItem",
    "augment_colors",
    "augment_coords",
    "augment_frame",
    "check_disjoint",
    "make_synthetic",
    "preprocess_frame",
    "read_manifest",
    "sample_training_item",
    "split_identities",
    "write_manifest",
]
