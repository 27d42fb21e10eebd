"""Vertebra segmentation: U-net, two-step training, sliding-window inference, clean-up."""

from .inference import (ProbabilityMap, SegmentationResult, postprocess, resolve_min_component, segment_volume,
                        sliding_window_infer, tile_starts)
from .losses import class_frequencies, compute_class_weights, weighted_cross_entropy
from .network import HEAD, SegmentationNet
from .training import (SegTrainingResult, augmented_crop, inherited_digests, init_from_binary,
                       network_from_checkpoint, train_binary, train_multiclass)

__all__ = [
    "HEAD", "ProbabilityMap", "SegTrainingResult", "SegmentationNet", "SegmentationResult", "augmented_crop",
    "class_frequencies", "compute_class_weights", "inherited_digests", "init_from_binary",
    "network_from_checkpoint", "postprocess", "resolve_min_component", "segment_volume", "sliding_window_infer",
    "tile_starts", "train_binary", "train_multiclass", "weighted_cross_entropy",
]
