"""Lumbar ROI localisation: Canny references, displacement regression, KDE voting."""

from .canny import ReferenceVoxelSet, canny3d, canny_mask, gradient_magnitude, hysteresis, non_maximum_suppression
from .kde import CornerVotes, density_mode, kde_aggregate, scott_bandwidth
from .losses import IoULoss, iou_loss_3d, mse_loss
from .network import LocalizationNet
from .training import (
    LocalizerTrainingResult,
    displacement_targets,
    extract_patches,
    network_from_checkpoint,
    predict_roi,
    predict_votes,
    reference_voxels,
    standardize,
    train_localizer,
)

__all__ = [
    "CornerVotes",
    "IoULoss",
    "LocalizationNet",
    "LocalizerTrainingResult",
    "ReferenceVoxelSet",
    "canny3d",
    "canny_mask",
    "density_mode",
    "displacement_targets",
    "extract_patches",
    "gradient_magnitude",
    "hysteresis",
    "iou_loss_3d",
    "kde_aggregate",
    "mse_loss",
    "network_from_checkpoint",
    "non_maximum_suppression",
    "predict_roi",
    "predict_votes",
    "reference_voxels",
    "scott_bandwidth",
    "standardize",
    "train_localizer",
]
