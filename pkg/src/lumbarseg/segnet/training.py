"""Binary then multi-class SegmentationNet training on augmented ROI crops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import AdamState, Checkpoint, Tensor, cosine_lr, snapshot, step_network, tensor_digest
from ..config import SegmenterConfig
from ..dataset import BoundingBox3D, crop, elastic_deform, gray_value_augment, roi_augment, sample_training_patches
from ..errors import CheckpointError, NumericError, TrainingError
from .losses import compute_class_weights, weighted_cross_entropy
from .network import HEAD, SegmentationNet

log = logging.getLogger(__name__)


@dataclass
class SegTrainingResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    class_weights: np.ndarray = None


def collapse(labels, class_count):
    return (labels > 0).astype(np.uint8) if class_count == 2 else labels


def build_network(cfg, class_count, seed=0):
    return SegmentationNet(cfg.depth, cfg.base_width, class_count, seed=seed)


def network_from_checkpoint(ckpt):
    arch = ckpt.metadata.get("architecture")
    if arch is None or ckpt.metadata.get("network") != "segmentation":
        raise CheckpointError("checkpoint does not hold a SegmentationNet")
    net = SegmentationNet(arch["depth"], arch["base_width"], arch["class_count"])
    try:
        net.load_state_dict(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint tensors do not fit the stored architecture: {exc}") from exc
    return net


def augmented_crop(volume, labels, cfg, seed):
    """Gray-value change, elastic warp, jittered tight box, crop with margin."""
    volume = gray_value_augment(volume, seed, cfg.gray_scale_range, cfg.gray_shift_range)
    volume, labels = elastic_deform(volume, labels, seed, cfg.elastic_grid_spacing, cfg.elastic_amplitude)
    box = BoundingBox3D.of_mask(labels.data > 0)
    box = roi_augment(box, seed, cfg.roi_jitter)
    return crop(volume, box, cfg.crop_margin), crop(labels, box, cfg.crop_margin)


def _class_weights(cases, cfg, class_count):
    if cfg.class_weights != "auto":
        w = np.array([float(v) for v in str(cfg.class_weights).replace(",", " ").split()])
        if w.shape != (class_count,) or np.any(w <= 0):
            raise TrainingError(f"class_weights needs {class_count} positive values, got {cfg.class_weights!r}")
        return w
    crops = []
    for _, labels in cases:
        box = BoundingBox3D.of_mask(labels.data > 0)
        crops.append(collapse(crop(labels, box, cfg.crop_margin).data, class_count))
    return compute_class_weights(crops, class_count)


def _train(net, cases, cfg, epochs, seed, class_count, on_epoch, stage):
    weights = _class_weights(cases, cfg, class_count)
    state = AdamState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([seed, 0x5E7, class_count])
    history = []
    for epoch in range(epochs):
        state.learning_rate = cosine_lr(cfg.learning_rate, epoch, epochs, cfg.lr_final_fraction)
        losses = []
        batch_x, batch_y = [], []
        order = rng.permutation(len(cases))
        for pos, ci in enumerate(order):
            sample_seed = int(rng.integers(2**31))
            vol, lab = augmented_crop(*cases[ci], cfg, sample_seed)
            for patch in sample_training_patches(vol, lab, cfg.patch_extents, cfg.patches_per_volume, sample_seed):
                batch_x.append(patch.image)
                batch_y.append(collapse(patch.labels, class_count))
            if len(batch_x) < cfg.batch_size and pos < len(order) - 1:
                continue
            x = Tensor(np.stack(batch_x)[:, None].astype(np.float32))
            loss = weighted_cross_entropy(net(x, "train"), np.stack(batch_y), weights)
            batch_x, batch_y = [], []
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"{stage}: non-finite loss at epoch {epoch}")
            loss.backward()
            step_network(net, state)
            losses.append(value)
        mean = float(np.mean(losses))
        history.append(mean)
        log.info("segmenter %s epoch %d loss %.5f", stage, epoch, mean)
        if on_epoch is not None:
            on_epoch(stage, epoch, mean)
    return state, history, weights


def _check_cases(cases):
    cases = list(cases)
    if not cases:
        raise TrainingError("no training volumes")
    if not any(np.any(lab.data > 0) for _, lab in cases):
        raise TrainingError("every training label volume is pure background")
    # cases without foreground cannot be cropped to a ROI
    return [(v, l) for v, l in cases if np.any(l.data > 0)]


def _meta(net, cfg, seed, weights, history, **extra):
    return {"network": "segmentation", "architecture": net.config, "seed": seed,
            "patch_extents": list(cfg.patch_extents), "class_weights": [float(w) for w in weights],
            "history": history, **extra}


def train_binary(cases, cfg=None, seed=0, on_epoch=None):
    """Train the 2-class network (background vs. any vertebra) on ``(volume, labels)`` pairs."""
    cfg = cfg or SegmenterConfig()
    cases = _check_cases(cases)
    net = build_network(cfg, 2, seed)
    net.check_extents(cfg.patch_extents)
    state, history, weights = _train(net, cases, cfg, cfg.binary_epochs, seed, 2, on_epoch, "binary")
    return SegTrainingResult(snapshot(net, state, _meta(net, cfg, seed, weights, history, stage="binary")),
                             history, weights)


def init_from_binary(binary, class_count=6, seed=0):
    """Multi-class network holding every binary tensor except a fresh head."""
    src = network_from_checkpoint(binary)
    if src.class_count != 2:
        raise CheckpointError("initialisation source must be a binary checkpoint")
    net = SegmentationNet(src.depth, src.base_width, class_count, seed=seed)
    net.load_state_dict(binary.tensors, skip=(HEAD + ".",))
    return net


def inherited_digests(net):
    return {k: tensor_digest(v) for k, v in net.state_dict().items() if not k.startswith(HEAD + ".")}


def train_multiclass(cases, binary, cfg=None, seed=0, on_epoch=None):
    """Six-class training initialised from ``binary`` (all layers but the head)."""
    cfg = cfg or SegmenterConfig()
    cases = _check_cases(cases)
    arch = binary.metadata.get("architecture", {})
    if (arch.get("depth"), arch.get("base_width")) != (cfg.depth, cfg.base_width):
        raise CheckpointError(f"binary checkpoint architecture {arch} does not match depth={cfg.depth}, "
                              f"base_width={cfg.base_width}")
    net = init_from_binary(binary, 6, seed)
    expected = {k: tensor_digest(v) for k, v in binary.tensors.items() if not k.startswith(HEAD + ".")}
    step0 = inherited_digests(net)
    if step0 != expected:
        raise CheckpointError("multi-class initialisation diverged from the binary checkpoint")
    state, history, weights = _train(net, cases, cfg, cfg.multiclass_epochs, seed, 6, on_epoch, "multiclass")
    meta = _meta(net, cfg, seed, weights, history, stage="multiclass", binary_digests=step0)
    return SegTrainingResult(snapshot(net, state, meta), history, weights)
