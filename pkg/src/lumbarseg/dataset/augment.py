"""Training-time augmentation: gray values, smooth elastic warps, ROI jitter."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, GeometryError
from .volume import BoundingBox3D, LabelVolume


def apply_gray(volume, scale, shift):
    return volume.with_data(volume.data * np.float32(scale) + np.float32(shift))


def gray_value_augment(volume, seed, scale_range=(0.9, 1.1), shift_range=(-0.1, 0.1)):
    """Random global affine intensity change ``scale * v + shift``."""
    rng = np.random.default_rng([seed, 0x6A7])
    scale = rng.uniform(*scale_range) if scale_range[1] > scale_range[0] else scale_range[0]
    shift = rng.uniform(*shift_range) if shift_range[1] > shift_range[0] else shift_range[0]
    return apply_gray(volume, scale, shift)


def random_displacement(extents, seed, grid_spacing=8, amplitude=2.0):
    """Dense ``(3, D, H, W)`` field, trilinearly upsampled from a coarse control grid.

    Control displacements are uniform in ``[-amplitude, amplitude]`` voxels.
    """
    if amplitude == 0:
        return np.zeros((3,) + tuple(extents))
    rng = np.random.default_rng([seed, 0xE1A])
    coarse_shape = tuple(int(np.ceil((n - 1) / grid_spacing)) + 1 for n in extents)
    coarse = rng.uniform(-amplitude, amplitude, size=(3,) + coarse_shape)
    grid = np.meshgrid(*[np.arange(n) / grid_spacing for n in extents], indexing="ij")
    return np.stack([ndimage.map_coordinates(c, grid, order=1, mode="nearest") for c in coarse])


def apply_displacement(volume, labels, field):
    """Pull-back warp: output voxel ``p`` samples input at ``p + field[:, p]``."""
    if volume.extents != labels.extents:
        raise GeometryError(f"image {volume.extents} and labels {labels.extents} differ in extent")
    grid = np.indices(volume.extents, dtype=np.float64) + field
    image = ndimage.map_coordinates(volume.data.astype(np.float64), grid, order=1, mode="nearest")
    lab = ndimage.map_coordinates(labels.data, grid, order=0, mode="nearest")
    return volume.with_data(image.astype(np.float32)), LabelVolume(lab, labels.spacing, labels.origin)


def elastic_deform(volume, labels, seed, grid_spacing=8, amplitude=2.0):
    """Warp image (trilinear) and labels (nearest) with one shared smooth field."""
    if amplitude == 0:
        return volume, labels
    field = random_displacement(volume.extents, seed, grid_spacing, amplitude)
    return apply_displacement(volume, labels, field)


def roi_augment(box, seed, fraction=0.1):
    """Move every corner coordinate by up to ``fraction`` of the box size on that axis."""
    if not 0 <= fraction < 0.5:
        raise ConfigError(f"ROI jitter fraction must be in [0, 0.5), got {fraction}")
    if fraction == 0:
        return box
    rng = np.random.default_rng([seed, 0x801])
    size = np.asarray(box.size)
    lo = np.asarray(box.corner_low) + rng.uniform(-1, 1, 3) * fraction * size
    hi = np.asarray(box.corner_high) + rng.uniform(-1, 1, 3) * fraction * size
    return BoundingBox3D(tuple(lo), tuple(hi))
