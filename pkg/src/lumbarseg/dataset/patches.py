"""Patch extraction helpers shared by training and inference."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Patch(NamedTuple):
    image: np.ndarray
    labels: np.ndarray
    start: tuple  # index of the patch origin inside the (padded) source


def pad_to_extent(array, extents):
    """Zero-pad symmetrically up to ``extents`` (no-op on axes already large enough).

    Returns the padded array and the number of voxels added before each axis.
    """
    before, pads = [], []
    for n, target in zip(array.shape, extents):
        extra = max(0, target - n)
        lo = extra // 2
        before.append(lo)
        pads.append((lo, extra - lo))
    if any(p != (0, 0) for p in pads):
        array = np.pad(array, pads)
    return array, tuple(before)


def extract_centered(array, center, extents):
    """``extents``-sized window centred on ``center`` (index ``c - n // 2`` starts it),
    zero-filled wherever it leaves the array."""
    out = np.zeros(extents, dtype=array.dtype)
    src, dst = [], []
    for c, n, size in zip(center, extents, array.shape):
        start = int(c) - n // 2
        lo, hi = max(start, 0), min(start + n, size)
        if hi <= lo:
            return out
        src.append(slice(lo, hi))
        dst.append(slice(lo - start, hi - start))
    out[tuple(dst)] = array[tuple(src)]
    return out


def sample_training_patches(volume, labels, patch_extents, count, seed):
    """``count`` aligned (image, label) windows at uniform random positions, in shuffled order.

    Sources smaller than the patch are zero-padded symmetrically first.
    """
    image, _ = pad_to_extent(np.asarray(volume.data), patch_extents)
    lab, _ = pad_to_extent(np.asarray(labels.data), patch_extents)
    rng = np.random.default_rng([seed, 0xA7C])
    starts = [tuple(int(rng.integers(0, n - p + 1)) for n, p in zip(image.shape, patch_extents))
              for _ in range(count)]
    patches = []
    for s in starts:
        sl = tuple(slice(a, a + p) for a, p in zip(s, patch_extents))
        patches.append(Patch(image[sl].copy(), lab[sl].copy(), s))
    order = rng.permutation(count)
    return [patches[i] for i in order]
