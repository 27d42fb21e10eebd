"""Kernel density aggregation of per-reference-voxel corner votes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import BoundingBox3D
from ..errors import AggregationError


@dataclass(frozen=True, eq=False)
class CornerVotes:
    low: np.ndarray  # (n, 3) votes for corner_low, voxel coordinates
    high: np.ndarray  # (n, 3) votes for corner_high

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64).reshape(-1, 3)
        high = np.asarray(self.high, dtype=np.float64).reshape(-1, 3)
        if len(low) != len(high):
            raise ValueError(f"vote counts differ: {len(low)} low vs {len(high)} high")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def from_displacements(cls, references, displacements):
        references = np.asarray(references, dtype=np.float64)
        displacements = np.asarray(displacements, dtype=np.float64)
        return cls(references + displacements[:, :3], references + displacements[:, 3:])


def scott_bandwidth(points, floor=1.0):
    """Per-axis Scott's rule ``sigma * n^(-1/(d+4))``, never below ``floor``."""
    n, d = points.shape
    sigma = points.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    return np.maximum(sigma * n ** (-1.0 / (d + 4)), floor)


def density_at_votes(points, bandwidth, chunk=512):
    """Unnormalised Gaussian-product density evaluated at every vote."""
    inv = 1.0 / np.asarray(bandwidth, dtype=np.float64)
    scaled = points * inv
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        diff = scaled[start:start + chunk, None, :] - scaled[None, :, :]
        out[start:start + chunk] = np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff)).sum(axis=1)
    return out


def density_mode(points, bandwidth="scott", floor=1.0):
    """The vote with the highest kernel density.

    Votes are put in lexicographic order first, so the result does not depend
    on the order they arrive in; ties go to the lexicographically first vote.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise AggregationError("no votes to aggregate")
    points = points[np.lexsort(points.T[::-1])]
    bw = scott_bandwidth(points, floor) if bandwidth == "scott" else np.broadcast_to(float(bandwidth), 3)
    dens = density_at_votes(points, bw)
    return points[int(np.argmax(dens))]


def kde_aggregate(votes, bandwidth="scott", floor=1.0):
    """Corner estimates at the density maxima, sorted into a valid box."""
    if len(votes.low) == 0:
        raise AggregationError("no votes to aggregate")
    lo = density_mode(votes.low, bandwidth, floor)
    hi = density_mode(votes.high, bandwidth, floor)
    a, b = np.minimum(lo, hi), np.maximum(lo, hi)
    # coincident corners on an axis would give a zero-volume box
    b = np.where(b > a, b, a + 1.0)
    return BoundingBox3D(tuple(a), tuple(b))
