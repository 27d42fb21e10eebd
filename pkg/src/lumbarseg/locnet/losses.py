"""Regression losses on corner displacement vectors."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..autodiff import Tensor
from ..autodiff.tensor import make_result


def mse_loss(predicted, target):
    """Mean of squared componentwise differences."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=predicted.dtype))
    diff = predicted - target
    return (diff * diff).mean()


class IoULoss(NamedTuple):
    loss: Tensor  # mean over overlapping samples
    per_sample: np.ndarray  # -ln(IoU + eps) for every sample
    disjoint: np.ndarray  # True where predicted and target boxes do not intersect


def _boxes(d, reference):
    a = reference + d[:, :3]
    b = reference + d[:, 3:]
    return np.minimum(a, b), np.maximum(a, b), a <= b


def _others(x):
    """Per column, the product of the other two columns."""
    return np.stack([x[:, 1] * x[:, 2], x[:, 0] * x[:, 2], x[:, 0] * x[:, 1]], axis=1)


def iou_loss_3d(predicted, target, reference=None, eps=1e-7):
    """``-ln(IoU + eps)`` between boxes rebuilt as ``reference + displacement``.

    ``predicted`` is an ``(N, 6)`` tensor ``(d_low, d_high)``; its two corners
    are sorted per axis so every prediction is a valid box. Samples whose boxes
    do not intersect are flagged, get ``-ln(eps)`` in ``per_sample`` and are
    left out of the mean, since the loss carries no gradient there.
    """
    d = np.asarray(predicted.data, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(d.shape)
    ref = np.zeros((d.shape[0], 3)) if reference is None else np.broadcast_to(np.asarray(reference, float),
                                                                               (d.shape[0], 3))
    lo_p, hi_p, a_is_lo = _boxes(d, ref)
    lo_t, hi_t, _ = _boxes(t, ref)
    w = np.minimum(hi_p, hi_t) - np.maximum(lo_p, lo_t)
    wc = np.clip(w, 0.0, None)
    inter = wc.prod(axis=1)
    ext_p = hi_p - lo_p
    vol_p = ext_p.prod(axis=1)
    vol_t = (hi_t - lo_t).prod(axis=1)
    union = vol_p + vol_t - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    per_sample = -np.log(iou + eps)
    disjoint = inter <= 0
    overlap = ~disjoint
    n_ov = int(overlap.sum())
    value = per_sample[overlap].mean() if n_ov else -np.log(eps)

    def backward(g):
        if n_ov == 0:
            predicted.accumulate(np.zeros_like(predicted.data))
            return
        scale = float(g) / n_ov
        dl_diou = np.where(overlap, -1.0 / (iou + eps), 0.0) * scale
        u2 = np.where(overlap, union, 1.0) ** 2
        g_inter = (dl_diou * (vol_p + vol_t) / u2)[:, None]
        g_volp = (dl_diou * -inter / u2)[:, None]
        di_dw = _others(wc)
        dv_de = _others(ext_p)
        d_hi = g_inter * di_dw * (hi_p <= hi_t) + g_volp * dv_de
        d_lo = -g_inter * di_dw * (lo_p >= lo_t) - g_volp * dv_de
        grad = np.concatenate([np.where(a_is_lo, d_lo, d_hi), np.where(a_is_lo, d_hi, d_lo)], axis=1)
        predicted.accumulate(grad.astype(predicted.dtype))

    loss = make_result(np.asarray(value, dtype=predicted.dtype), (predicted,), backward)
    return IoULoss(loss, per_sample, disjoint)
