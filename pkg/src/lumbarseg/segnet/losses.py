"""Class-weighted cross-entropy and the inverse-frequency weighting rule."""

from __future__ import annotations

import logging

import numpy as np

from ..autodiff.ops import softmax_array
from ..autodiff.tensor import make_result
from ..errors import DataError

log = logging.getLogger(__name__)

WEIGHT_CLIP = (0.1, 10.0)


def weighted_cross_entropy(logits, labels, weights=None):
    """Mean over voxels of ``w[y] * -log softmax(logits)[y]`` with a fused backward.

    ``logits`` is ``(N, C, ...)``; ``labels`` is an integer array ``(N, ...)``.
    """
    z = np.asarray(logits.data, dtype=np.float64)
    c = z.shape[1]
    y = np.asarray(labels)
    if y.shape != z.shape[:1] + z.shape[2:]:
        raise DataError(f"labels shape {y.shape} does not match logits {z.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise DataError(f"labels must lie in 0..{c - 1}, found {int(y.min())}..{int(y.max())}")
    w = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (c,) or np.any(w <= 0):
        raise DataError(f"need {c} strictly positive class weights, got {w}")
    shifted = z - z.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = y.astype(np.int64)
    picked = np.take_along_axis(log_p, y[:, None], axis=1)[:, 0]
    wy = w[y]
    count = y.size
    value = float((wy * -picked).sum() / count)

    def backward(g):
        grad = np.exp(log_p)
        np.put_along_axis(grad, y[:, None], np.take_along_axis(grad, y[:, None], axis=1) - 1.0, axis=1)
        grad *= (float(g) / count) * wy[:, None]
        logits.accumulate(grad.astype(logits.dtype))

    return make_result(np.asarray(value, dtype=logits.dtype), (logits,), backward)


def class_frequencies(label_arrays, class_count):
    counts = np.zeros(class_count, dtype=np.int64)
    for arr in label_arrays:
        counts += np.bincount(np.asarray(arr, dtype=np.int64).ravel(), minlength=class_count)[:class_count]
    return counts


def compute_class_weights(label_arrays, class_count):
    """Inverse class frequency, scaled to mean 1 over present classes, clipped to [0.1, 10].

    Background (class 0) is capped at the smallest vertebra weight. A class
    absent from every array gets weight 1 and a warning.
    """
    counts = class_frequencies(label_arrays, class_count)
    if counts.sum() == 0:
        raise DataError("no labelled voxels to derive class weights from")
    present = counts > 0
    w = np.ones(class_count)
    w[present] = counts.sum() / counts[present]
    w[present] /= w[present].mean()
    w = np.clip(w, *WEIGHT_CLIP)
    for cls in np.flatnonzero(~present):
        log.warning("class %d absent from training labels; using weight 1", cls)
    if class_count > 1:
        w[0] = min(w[0], w[1:].min())
    return w


def probabilities(logits):
    return softmax_array(np.asarray(logits.data, dtype=np.float64), axis=1)
