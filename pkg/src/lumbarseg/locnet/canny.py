"""3D Canny edge detection used to pick reference voxels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ConfigError

# a gradient component counts towards the quantised direction when it is at
# least tan(22.5 deg) of the dominant component
_DIRECTION_RATIO = np.tan(np.pi / 8)


@dataclass(frozen=True, eq=False)
class ReferenceVoxelSet:
    positions: np.ndarray  # (n, 3) int voxel indices, lexicographically sorted
    volume_id: str = ""

    @property
    def empty(self):
        return len(self.positions) == 0

    def __len__(self):
        return len(self.positions)


def gradient_magnitude(image, sigma):
    """Smoothed central-difference gradient ``(gz, gy, gx)`` and its magnitude.

    Differencing is done before smoothing (both are linear and shift-invariant,
    so the order does not matter in the interior). Differencing first makes
    the result exactly independent of a constant intensity offset.
    """
    image = np.asarray(image, dtype=np.float64)
    grads = []
    for axis in range(3):
        g = np.gradient(image, axis=axis) if image.shape[axis] > 1 else np.zeros_like(image)
        if sigma > 0:
            g = ndimage.gaussian_filter(g, sigma, mode="nearest")
        grads.append(g)
    grads = np.stack(grads)
    return grads, np.sqrt((grads ** 2).sum(axis=0))


def _quantised_directions(grads, mag):
    dominant = np.abs(grads).max(axis=0)
    use = np.abs(grads) >= _DIRECTION_RATIO * dominant
    return np.where(use & (mag > 0), np.sign(grads), 0).astype(np.int64)


def non_maximum_suppression(grads, mag):
    """Keep voxels whose magnitude is a maximum along the quantised gradient direction.

    A voxel must be strictly greater than its neighbour behind it and at least
    equal to the one ahead, so a plateau two voxels wide yields a single layer.
    """
    steps = _quantised_directions(grads, mag)
    shape = mag.shape
    idx = np.indices(shape)
    ahead = np.clip(idx + steps, 0, np.array(shape).reshape(3, 1, 1, 1) - 1)
    behind = np.clip(idx - steps, 0, np.array(shape).reshape(3, 1, 1, 1) - 1)
    m_ahead = mag[tuple(ahead)]
    m_behind = mag[tuple(behind)]
    return (mag > 0) & (mag >= m_ahead) & (mag > m_behind)


def hysteresis(candidates, mag, low, high):
    """Weak candidates survive only when 26-connected to a strong one."""
    weak = candidates & (mag >= low)
    strong = candidates & (mag >= high)
    if not strong.any():
        return np.zeros_like(weak)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3, 3), dtype=bool))
    keep = np.zeros(count + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def canny_mask(image, sigma=1.0, low_threshold=0.1, high_threshold=0.2):
    if not 0 <= low_threshold < high_threshold:
        raise ConfigError(f"need 0 <= low < high thresholds, got {low_threshold}, {high_threshold}")
    grads, mag = gradient_magnitude(image, sigma)
    return hysteresis(non_maximum_suppression(grads, mag), mag, low_threshold, high_threshold)


def canny3d(volume, sigma=1.0, low_threshold=0.1, high_threshold=0.2, volume_id=""):
    """Edge voxels of ``volume``; an empty set means no edge response at all."""
    data = volume.data if hasattr(volume, "data") else volume
    mask = canny_mask(data, sigma, low_threshold, high_threshold)
    return ReferenceVoxelSet(np.argwhere(mask), volume_id)
