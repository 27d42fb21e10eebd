"""Overlap and surface-distance measures between label volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..errors import EvaluationError

LABELS = (1, 2, 3, 4, 5)
LABEL_NAMES = {1: "L1", 2: "L2", 3: "L3", 4: "L4", 5: "L5"}
METRICS = ("dc", "jc", "hd_mm", "assd_mm")


def _pair(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise EvaluationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not a.any() and not b.any():
        raise EvaluationError("both masks are empty; overlap is undefined")
    return a, b


def dice(a, b):
    a, b = _pair(a, b)
    return 2.0 * np.count_nonzero(a & b) / (np.count_nonzero(a) + np.count_nonzero(b))


def jaccard(a, b):
    a, b = _pair(a, b)
    return np.count_nonzero(a & b) / np.count_nonzero(a | b)


def surface_mask(mask):
    """Voxels of ``mask`` with a 6-neighbour outside it; the volume border counts as outside."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, border_value=0)
    return mask & ~interior


def extract_surface(mask, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Physical (mm) centres of the surface voxels, shape ``(n, 3)``."""
    idx = np.argwhere(surface_mask(mask))
    if len(idx) == 0:
        raise EvaluationError("cannot extract the surface of an empty region")
    return np.asarray(origin, dtype=np.float64) + idx * np.asarray(spacing, dtype=np.float64)


def _directed(src, dst):
    dist, _ = cKDTree(dst).query(src, k=1)
    return dist


def _check_sets(sa, sb):
    if len(sa) == 0 or len(sb) == 0:
        raise EvaluationError("surface distance needs two non-empty point sets")


def hausdorff(sa, sb):
    _check_sets(sa, sb)
    return float(max(_directed(sa, sb).max(), _directed(sb, sa).max()))


def assd(sa, sb):
    _check_sets(sa, sb)
    return float((_directed(sa, sb).sum() + _directed(sb, sa).sum()) / (len(sa) + len(sb)))


@dataclass
class MetricReport:
    """Per-label metrics; ``None`` marks an undefined value.

    A label missing from the ground truth is absent and left out of the lumbar
    mean. A label present in the truth but missing from the prediction scores
    DC = JC = 0 while its distances are undefined.
    """

    labels: dict = field(default_factory=dict)  # label -> {metric: value or None}
    absent: list = field(default_factory=list)

    def lumbar(self):
        out = {}
        for m in METRICS:
            vals = [row[m] for row in self.labels.values() if row[m] is not None]
            out[m] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self):
        return {"labels": {LABEL_NAMES[k]: v for k, v in sorted(self.labels.items())},
                "absent": [LABEL_NAMES[k] for k in self.absent], "lumbar": self.lumbar()}


def evaluate(predicted, truth, labels=LABELS):
    """Per-vertebra DC, JC, HD and ASSD in the truth volume's physical frame."""
    p = np.asarray(predicted.data)
    t = np.asarray(truth.data)
    if p.shape != t.shape or not np.allclose(predicted.spacing, truth.spacing) \
            or not np.allclose(predicted.origin, truth.origin):
        raise EvaluationError(f"prediction geometry {p.shape}/{predicted.spacing}/{predicted.origin} differs "
                              f"from truth {t.shape}/{truth.spacing}/{truth.origin}")
    report = MetricReport()
    for label in labels:
        tm, pm = t == label, p == label
        if not tm.any():
            report.absent.append(label)
            continue
        row = {"dc": dice(pm, tm), "jc": jaccard(pm, tm), "hd_mm": None, "assd_mm": None}
        if pm.any():
            sp = extract_surface(pm, truth.spacing, truth.origin)
            st = extract_surface(tm, truth.spacing, truth.origin)
            row["hd_mm"], row["assd_mm"] = hausdorff(sp, st), assd(sp, st)
        report.labels[label] = row
    return report


def mean_sd(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))
