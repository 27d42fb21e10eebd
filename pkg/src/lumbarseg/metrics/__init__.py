"""Segmentation metrics and the cross-validation harness."""

from .crossval import CrossvalReport, FoldResult, cross_validate, fold_splits, format_table, run_pipeline
from .measures import (LABEL_NAMES, LABELS, METRICS, MetricReport, assd, dice, evaluate, extract_surface, hausdorff,
                       jaccard, mean_sd, surface_mask)

__all__ = [
    "CrossvalReport", "FoldResult", "LABELS", "LABEL_NAMES", "METRICS", "MetricReport", "assd", "cross_validate",
    "dice", "evaluate", "extract_surface", "fold_splits", "format_table", "hausdorff", "jaccard", "mean_sd",
    "run_pipeline", "surface_mask",
]
