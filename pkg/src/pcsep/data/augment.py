"""Point-cloud normalisation and coordinate/colour/gain augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from ..errors import DataError, EmptyInputError
from ..sparse import PointCloudFrame

ROT_Y_RANGE = np.pi
ROT_AXIS_RANGE = np.pi / 6
SCALE_RANGE = (0.5, 1.5)
TRANSLATION_STD = 0.4
SHEAR_STD = 0.1
VALUE_RANGE = 0.2
SATURATION_RANGE = 0.15
RGB_NOISE_STD = 0.05
GAIN_RANGE = (0.5, 1.5)


def preprocess_frame(raw: PointCloudFrame, axes: Sequence[int] = (0, 1, 2),
                     signs: Sequence[float] = (1.0, 1.0, 1.0)) -> PointCloudFrame:
    """Centre on the centroid, scale so max |coordinate| is 1, then reorder axes.

    ``axes`` and ``signs`` declare how the source dataset's axes map onto
    x = side, y = stature, z = facing direction: output axis ``j`` is
    ``signs[j] * input[:, axes[j]]``.
    """
    if len(raw) == 0:
        raise EmptyInputError("cannot preprocess an empty frame")
    if sorted(axes) != [0, 1, 2]:
        raise DataError(f"axes must be a permutation of (0, 1, 2), got {tuple(axes)}")
    c = raw.coordinates - raw.coordinates.mean(axis=0)
    extent = np.abs(c).max()
    if extent == 0:
        raise DataError("all points coincide; cannot scale the frame to the unit cube")
    c = c / extent
    c = c[:, list(axes)] * np.asarray(signs, dtype=np.float64)
    return PointCloudFrame(c, None if raw.colors is None else raw.colors.copy())


@dataclass
class AugmentParams:
    rotation_y: float = 0.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    axis_angle: float = 0.0
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    shear: np.ndarray = field(default_factory=lambda: np.zeros(6))
    value_shift: float = 0.0
    saturation_shift: float = 0.0
    rgb_noise_std: float = 0.0
    noise_seed: int = 0
    gain: float = 1.0

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls()

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "AugmentParams":
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        return cls(
            rotation_y=rng.uniform(-ROT_Y_RANGE, ROT_Y_RANGE),
            axis=axis,
            axis_angle=rng.uniform(-ROT_AXIS_RANGE, ROT_AXIS_RANGE),
            scale=rng.uniform(*SCALE_RANGE),
            translation=rng.normal(0.0, TRANSLATION_STD, size=3),
            shear=rng.normal(0.0, SHEAR_STD, size=6),
            value_shift=rng.uniform(-VALUE_RANGE, VALUE_RANGE),
            saturation_shift=rng.uniform(-SATURATION_RANGE, SATURATION_RANGE),
            rgb_noise_std=RGB_NOISE_STD,
            noise_seed=int(rng.integers(0, 2 ** 63 - 1)),
            gain=rng.uniform(*GAIN_RANGE),
        )

    def with_(self, **kw) -> "AugmentParams":
        return replace(self, **kw)


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def shear_matrix(elements: np.ndarray) -> np.ndarray:
    """Identity plus the six off-diagonal entries (xy, xz, yx, yz, zx, zy)."""
    m = np.eye(3)
    m[0, 1], m[0, 2], m[1, 0], m[1, 2], m[2, 0], m[2, 1] = elements
    return m


def coordinate_transform(p: AugmentParams) -> np.ndarray:
    """Linear part: y-rotation, then axis rotation, then scale, then shear."""
    return shear_matrix(p.shear) @ (p.scale * rotation_matrix(p.axis, p.axis_angle)) @ rotation_y(p.rotation_y)


def augment_coords(frame: PointCloudFrame, p: AugmentParams) -> PointCloudFrame:
    c = frame.coordinates @ coordinate_transform(p).T + np.asarray(p.translation)
    return PointCloudFrame(c, None if frame.colors is None else frame.colors.copy())


def augment_colors(frame: PointCloudFrame, p: AugmentParams) -> PointCloudFrame:
    """Shift HSV value and saturation (clamped), convert back, add clamped rgb noise."""
    if frame.colors is None:
        raise EmptyInputError("colour augmentation needs a frame with colours")
    hsv = rgb_to_hsv(np.clip(frame.colors, 0.0, 1.0))
    hsv[:, 1] = np.clip(hsv[:, 1] + p.saturation_shift, 0.0, 1.0)
    hsv[:, 2] = np.clip(hsv[:, 2] + p.value_shift, 0.0, 1.0)
    rgb = hsv_to_rgb(hsv)
    if p.rgb_noise_std > 0:
        noise = np.random.default_rng(p.noise_seed).normal(0.0, p.rgb_noise_std, size=rgb.shape)
        rgb = np.clip(rgb + noise, 0.0, 1.0)
    return PointCloudFrame(frame.coordinates.copy(), rgb)


def augment_frame(frame: PointCloudFrame, p: AugmentParams) -> PointCloudFrame:
    out = augment_coords(frame, p)
    if out.colors is not None:
        out = augment_colors(out, p)
    return out
