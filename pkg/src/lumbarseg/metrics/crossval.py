"""Repeated random hold-out cross-validation and report formatting."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..config import RunConfig
from ..errors import ConfigError
from ..locnet import train_localizer
from ..segnet import segment_volume, train_binary, train_multiclass
from .measures import LABEL_NAMES, LABELS, METRICS, evaluate, mean_sd

log = logging.getLogger(__name__)


def fold_splits(case_count, folds, held_out, seed):
    """Each fold independently draws ``held_out`` test cases; the rest train."""
    if held_out > case_count:
        raise ConfigError(f"cannot hold out {held_out} of {case_count} cases")
    if held_out >= case_count:
        raise ConfigError("every fold needs at least one training case")
    rng = np.random.default_rng([seed, 0xC5])
    splits = []
    for _ in range(folds):
        test = np.sort(rng.choice(case_count, size=held_out, replace=False))
        train = np.setdiff1d(np.arange(case_count), test)
        splits.append((train.tolist(), test.tolist()))
    return splits


@dataclass
class FoldResult:
    fold: int
    train: list
    test: list
    reports: list  # MetricReport per held-out case
    roi_iou: list
    seconds: float

    def mean(self, label, metric):
        vals = [r.labels[label][metric] for r in self.reports if label in r.labels]
        return mean_sd(vals)[0]

    def lumbar_mean(self, metric):
        return mean_sd([r.lumbar()[metric] for r in self.reports])[0]


@dataclass
class CrossvalReport:
    folds: list = field(default_factory=list)
    seconds: float = 0.0

    def summary(self):
        """Mean and sd across folds of each fold's average, per label and for the lumbar row."""
        rows = {}
        for label in LABELS:
            rows[LABEL_NAMES[label]] = {m: mean_sd([f.mean(label, m) for f in self.folds]) for m in METRICS}
        rows["Lumbar"] = {m: mean_sd([f.lumbar_mean(m) for f in self.folds]) for m in METRICS}
        return rows

    def roi_iou(self):
        return mean_sd([float(np.mean(f.roi_iou)) for f in self.folds])

    def to_dict(self):
        return {
            "seconds": self.seconds,
            "summary": {row: {m: {"mean": v[0], "sd": v[1]} for m, v in vals.items()}
                        for row, vals in self.summary().items()},
            "roi_iou": dict(zip(("mean", "sd"), self.roi_iou())),
            "folds": [{"fold": f.fold, "train": f.train, "test": f.test, "seconds": f.seconds,
                       "roi_iou": f.roi_iou, "cases": [r.to_dict() for r in f.reports]} for f in self.folds],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        return format_table(self.summary())


def _cell(pair, percent):
    mean, sd = pair
    if mean is None:
        return "n/a"
    k = 100.0 if percent else 1.0
    return f"{mean * k:.2f} ± {sd * k:.2f}"


def format_table(summary):
    header = f"{'':8}{'DC (%)':>18}{'JC (%)':>18}{'HD (mm)':>18}{'ASSD (mm)':>18}"
    lines = [header, "-" * len(header)]
    for row, vals in summary.items():
        cells = [_cell(vals["dc"], True), _cell(vals["jc"], True), _cell(vals["hd_mm"], False),
                 _cell(vals["assd_mm"], False)]
        lines.append(f"{row:8}" + "".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)


def run_pipeline(train_cases, test_cases, cfg, seed):
    """Train both networks on ``train_cases``; return per-case (MetricReport, ROI IoU)."""
    loc = train_localizer([(v, b) for v, _, b in train_cases], cfg.localizer, seed)
    pairs = [(v, l) for v, l, _ in train_cases]
    binary = train_binary(pairs, cfg.segmenter, seed)
    multi = train_multiclass(pairs, binary.checkpoint, cfg.segmenter, seed)
    results = []
    for v, labels, box in test_cases:
        seg = segment_volume(v, loc.checkpoint, multi.checkpoint, cfg.localizer, cfg.segmenter, seed)
        results.append((evaluate(seg.labels, labels), seg.roi.iou(box)))
    return results


def cross_validate(cases, cfg=None, seed=0, pipeline=run_pipeline, on_fold=None):
    """``cases`` is a list of ``(volume, labels, box)``; ``pipeline`` trains and evaluates one fold."""
    cfg = cfg or RunConfig()
    splits = fold_splits(len(cases), cfg.crossval.folds, cfg.crossval.held_out, seed)
    report = CrossvalReport()
    start = time.perf_counter()
    for k, (train, test) in enumerate(splits):
        t0 = time.perf_counter()
        results = pipeline([cases[i] for i in train], [cases[i] for i in test], cfg, seed * 1000 + k)
        fold = FoldResult(k, train, test, [r for r, _ in results], [float(i) for _, i in results],
                          time.perf_counter() - t0)
        report.folds.append(fold)
        log.info("fold %d: lumbar DC %.4f, ROI IoU %.4f, %.0f s", k, fold.lumbar_mean("dc") or 0.0,
                 float(np.mean(fold.roi_iou)), fold.seconds)
        if on_fold is not None:
            on_fold(fold)
    report.seconds = time.perf_counter() - start
    return report
