"""Two-round LocalizationNet training (L2, then IoU) and ROI prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import AdamState, Checkpoint, Tensor, cosine_lr, snapshot, step_network, tensor_digest
from ..config import LocalizerConfig
from ..dataset import extract_centered
from ..errors import LocalizationError, NumericError, TrainingError
from .canny import canny3d
from .kde import CornerVotes, kde_aggregate
from .losses import iou_loss_3d, mse_loss
from .network import LocalizationNet

log = logging.getLogger(__name__)


def standardize(patch):
    std = patch.std()
    return (patch - patch.mean()) / std if std > 0 else np.zeros_like(patch)


def extract_patches(image, references, size):
    """Standardised ``(n, 1, size, size, size)`` float32 windows centred on each reference."""
    out = np.empty((len(references), 1, size, size, size), dtype=np.float32)
    for i, ref in enumerate(references):
        out[i, 0] = standardize(extract_centered(image, ref, (size,) * 3).astype(np.float64))
    return out


def displacement_targets(references, box):
    """``(n, 6)`` vectors from each reference voxel to ``corner_low`` and ``corner_high``."""
    refs = np.asarray(references, dtype=np.float64)
    return np.concatenate([np.asarray(box.corner_low) - refs, np.asarray(box.corner_high) - refs], axis=1)


def reference_voxels(volume, cfg, volume_id=""):
    return canny3d(volume, cfg.canny_sigma, cfg.low_threshold, cfg.high_threshold, volume_id)


def build_network(cfg, seed=0):
    # a zero output layer starts every vote at the reference voxel; random
    # initial outputs (tens of voxels off) derail the first epoch
    return LocalizationNet(cfg.widths, cfg.reduction_width, cfg.hidden_width, cfg.patch_size, seed=seed,
                           zero_output=True)


def network_from_checkpoint(ckpt):
    arch = ckpt.metadata.get("architecture")
    if arch is None or ckpt.metadata.get("network") != "localization":
        raise TrainingError("checkpoint does not hold a LocalizationNet")
    net = LocalizationNet(tuple(arch["widths"]), arch["reduction_width"], arch["hidden_width"], arch["patch_size"])
    net.load_state_dict(ckpt.tensors)
    return net


@dataclass
class LocalizerTrainingResult:
    checkpoint: Checkpoint
    round1: Checkpoint
    history: dict = field(default_factory=dict)


def _epoch_batches(case_refs, per_volume, batch_size, rng):
    picks = []
    for ci, refs in enumerate(case_refs):
        if len(refs) == 0:
            continue
        take = min(per_volume, len(refs))
        for j in np.sort(rng.choice(len(refs), size=take, replace=False)):
            picks.append((ci, j))
    order = rng.permutation(len(picks))
    picks = [picks[i] for i in order]
    return [picks[i:i + batch_size] for i in range(0, len(picks), batch_size)]


def train_localizer(cases, cfg=None, seed=0, on_epoch=None):
    """Train on ``cases`` = iterable of ``(volume, box)`` pairs.

    Round one minimises the mean squared error of scaled displacements; round
    two starts from the round-one weights and minimises the IoU loss, skipping
    patches whose predicted box misses the target entirely.
    """
    cfg = cfg or LocalizerConfig()
    cases = list(cases)
    if not cases:
        raise TrainingError("no training volumes")
    images = [np.asarray(v.data) for v, _ in cases]
    boxes = [b for _, b in cases]
    case_refs = [reference_voxels(v, cfg).positions for v, _ in cases]
    if all(len(r) == 0 for r in case_refs):
        raise TrainingError("Canny found no reference voxels in any training volume")

    net = build_network(cfg, seed)
    rng = np.random.default_rng([seed, 0x70C])
    history = {"round1": [], "round2": [], "round2_skipped": []}

    def run_round(name, epochs, lr, loss_fn):
        state = AdamState(learning_rate=lr)
        for epoch in range(epochs):
            state.learning_rate = cosine_lr(lr, epoch, epochs, cfg.lr_final_fraction)
            losses, skipped = [], 0
            for batch in _epoch_batches(case_refs, cfg.train_refs_per_volume, cfg.batch_size, rng):
                refs = [case_refs[ci][j] for ci, j in batch]
                x = np.concatenate([extract_patches(images[ci], [case_refs[ci][j]], cfg.patch_size)
                                    for ci, j in batch])
                target = np.concatenate([displacement_targets([case_refs[ci][j]], boxes[ci]) for ci, j in batch])
                pred = net(Tensor(x), "train")
                loss, n_skip = loss_fn(pred, target, refs)
                skipped += n_skip
                if loss is None:
                    net.zero_grad()
                    continue
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"{name}: non-finite loss at epoch {epoch}")
                loss.backward()
                step_network(net, state)
                losses.append(value)
            mean = float(np.mean(losses)) if losses else float("nan")
            history[name].append(mean)
            if name == "round2":
                history["round2_skipped"].append(skipped)
            log.info("localizer %s epoch %d loss %.5f", name, epoch, mean)
            if on_epoch is not None:
                on_epoch(name, epoch, mean)
        return state

    def l2(pred, target, refs):
        return mse_loss(pred, target / cfg.displacement_scale), 0

    def iou(pred, target, refs):
        res = iou_loss_3d(pred * cfg.displacement_scale, target, np.asarray(refs, float), cfg.iou_eps)
        n_skip = int(res.disjoint.sum())
        return (None if n_skip == len(target) else res.loss), n_skip

    meta = {"network": "localization", "architecture": net.config, "seed": seed,
            "displacement_scale": cfg.displacement_scale}
    state1 = run_round("round1", cfg.round1_epochs, cfg.round1_lr, l2)
    round1 = snapshot(net, state1, {**meta, "round": 1, "history": dict(history)})
    handoff = {k: tensor_digest(v) for k, v in round1.tensors.items()}
    state2 = run_round("round2", cfg.round2_epochs, cfg.round2_lr, iou)
    final = snapshot(net, state2, {**meta, "round": 2, "history": history, "round1_digests": handoff})
    return LocalizerTrainingResult(final, round1, history)


def predict_votes(volume, net, cfg, seed=0):
    refs = reference_voxels(volume, cfg).positions
    if len(refs) == 0:
        raise LocalizationError("no Canny reference voxels in the volume")
    if len(refs) > cfg.infer_refs:
        rng = np.random.default_rng([seed, 0x1F7])
        refs = refs[np.sort(rng.choice(len(refs), size=cfg.infer_refs, replace=False))]
    image = np.asarray(volume.data)
    disp = []
    for start in range(0, len(refs), max(cfg.batch_size, 16)):
        chunk = refs[start:start + max(cfg.batch_size, 16)]
        pred = net(Tensor(extract_patches(image, chunk, cfg.patch_size)), "eval")
        disp.append(np.asarray(pred.data, dtype=np.float64) * cfg.displacement_scale)
    return refs, CornerVotes.from_displacements(refs, np.concatenate(disp))


def predict_roi(volume, checkpoint_or_net, cfg=None, seed=0):
    """Canny references -> per-patch displacement votes -> KDE corner estimates."""
    cfg = cfg or LocalizerConfig()
    net = checkpoint_or_net
    if isinstance(net, Checkpoint):
        net = network_from_checkpoint(net)
    _, votes = predict_votes(volume, net, cfg, seed)
    return kde_aggregate(votes, cfg.bandwidth, cfg.bandwidth_floor)
