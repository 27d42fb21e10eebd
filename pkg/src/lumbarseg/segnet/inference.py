"""Overlapping sliding-window inference, post-processing and the full segmentation pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..autodiff import Checkpoint, Tensor
from ..autodiff.ops import softmax_array
from ..config import LocalizerConfig, SegmenterConfig
from ..dataset import LabelVolume, crop, crop_slices, pad_to_extent
from ..errors import LocalizationError
from ..locnet import predict_roi
from .training import network_from_checkpoint

_FULL = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    probabilities: np.ndarray  # (classes, D, H, W), sums to 1 over axis 0
    spacing: tuple
    origin: tuple

    @property
    def class_count(self):
        return self.probabilities.shape[0]

    def argmax(self):
        # np.argmax returns the first maximum, so ties go to the lower class index
        return self.probabilities.argmax(axis=0).astype(np.uint8)


def tile_starts(size, patch, stride):
    """Window origins covering ``[0, size)``; the last one is clamped to end at ``size``."""
    if size <= patch:
        return [0]
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


def _as_net(model):
    return network_from_checkpoint(model) if isinstance(model, Checkpoint) else model


def sliding_window_infer(volume, model, cfg=None, batch_size=4):
    """Mean softmax over every tile covering each voxel (stride = ``stride_fraction`` of the patch)."""
    cfg = cfg or SegmenterConfig()
    net = _as_net(model)
    patch = tuple(cfg.patch_extents)
    image, before = pad_to_extent(np.asarray(volume.data, dtype=np.float32), patch)
    strides = [max(1, int(p * cfg.stride_fraction)) for p in patch]
    grids = [tile_starts(n, p, s) for n, p, s in zip(image.shape, patch, strides)]
    origins = [(a, b, c) for a in grids[0] for b in grids[1] for c in grids[2]]
    total = None
    hits = np.zeros(image.shape, dtype=np.float64)
    for i in range(0, len(origins), batch_size):
        chunk = origins[i:i + batch_size]
        windows = [tuple(slice(o, o + p) for o, p in zip(org, patch)) for org in chunk]
        x = np.stack([image[w] for w in windows])[:, None]
        probs = softmax_array(np.asarray(net(Tensor(x), "eval").data, dtype=np.float64), axis=1)
        if total is None:
            total = np.zeros((probs.shape[1],) + image.shape)
        for w, p in zip(windows, probs):
            total[(slice(None),) + w] += p
            hits[w] += 1
    total /= hits
    inner = tuple(slice(b, b + n) for b, n in zip(before, volume.extents))
    return ProbabilityMap(total[(slice(None),) + inner], volume.spacing, volume.origin)


def resolve_min_component(labels, min_component_voxels):
    """``"auto"`` means 1% of the largest 26-connected foreground component."""
    if min_component_voxels != "auto":
        return int(min_component_voxels)
    largest = 0
    for value in np.unique(labels[labels > 0]):
        comp, count = ndimage.label(labels == value, structure=_FULL)
        if count:
            largest = max(largest, int(np.bincount(comp.ravel())[1:].max()))
    return max(1, int(np.ceil(0.01 * largest)))


def _remove_small(labels, threshold):
    out = labels.copy()
    for value in np.unique(labels[labels > 0]):
        comp, count = ndimage.label(labels == value, structure=_FULL)
        sizes = np.bincount(comp.ravel())
        small = np.flatnonzero(sizes < threshold)
        small = small[small > 0]
        if small.size:
            out[np.isin(comp, small)] = 0
    return out


def _fill_cavities(labels):
    out = labels.copy()
    background = labels == 0
    comp, count = ndimage.label(background)  # 6-connected
    if count == 0:
        return out
    for value in np.unique(labels[labels > 0]):
        holes = ndimage.binary_fill_holes(labels == value) & background
        if not holes.any():
            continue
        inside = np.bincount(comp[holes], minlength=count + 1)
        sizes = np.bincount(comp.ravel(), minlength=count + 1)
        enclosed = np.flatnonzero((inside == sizes) & (sizes > 0))
        enclosed = enclosed[enclosed > 0]
        if enclosed.size:
            out[np.isin(comp, enclosed)] = value
    return out


def postprocess(labels, min_component_voxels="auto"):
    """Drop small 26-connected islands per label and fill single-label cavities.

    The two steps alternate until nothing changes, which makes the result a
    fixed point (applying it again is a no-op).
    """
    is_volume = isinstance(labels, LabelVolume)
    data = np.asarray(labels.data if is_volume else labels).astype(np.uint8)
    while True:
        # "auto" is re-resolved each pass: filling can grow the largest component.
        # It never shrinks (removal spares it), so the threshold only rises and this terminates.
        threshold = resolve_min_component(data, min_component_voxels)
        new = _fill_cavities(_remove_small(data, threshold))
        if np.array_equal(new, data):
            break
        data = new
    return LabelVolume(data, labels.spacing, labels.origin) if is_volume else data


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    labels: LabelVolume
    roi: object
    probabilities: ProbabilityMap


def segment_volume(volume, loc_model, seg_model, loc_cfg=None, seg_cfg=None, seed=0):
    """ROI prediction, margin crop, sliding-window labels, post-processing, re-embedding."""
    loc_cfg = loc_cfg or LocalizerConfig()
    seg_cfg = seg_cfg or SegmenterConfig()
    try:
        roi = predict_roi(volume, loc_model, loc_cfg, seed)
    except LocalizationError as exc:
        raise LocalizationError(f"segment_volume: {exc}") from exc
    sl = crop_slices(volume.extents, roi, seg_cfg.crop_margin)
    probs = sliding_window_infer(crop(volume, roi, seg_cfg.crop_margin), seg_model, seg_cfg)
    local = postprocess(probs.argmax(), seg_cfg.min_component_voxels)
    full = np.zeros(volume.extents, dtype=np.uint8)
    full[sl] = local
    return SegmentationResult(LabelVolume(full, volume.spacing, volume.origin), roi, probs)
