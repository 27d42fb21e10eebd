"""Release gate: gradient, metric-oracle and KDE-recovery checks that run in seconds."""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, finite_difference_check
from .autodiff import ops
from .autodiff.tensor import Tensor as _TensorClass
from .locnet import density_mode, iou_loss_3d, mse_loss
from .metrics import assd, dice, extract_surface, hausdorff, jaccard
from .segnet import weighted_cross_entropy


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _conv_case(rng):
    c, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = _t(rng.standard_normal((1, c, 4, 5, 4)))
    k = _t(rng.standard_normal((o, c, 3, 3, 3)))
    b = _t(rng.standard_normal(o))
    w = rng.standard_normal((1, o, 4, 5, 4))
    return lambda x, k, b: (ops.conv3d_raw(x, k, b) * Tensor(w)).sum(), [x, k, b]


def _deconv_case(rng):
    c, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = _t(rng.standard_normal((1, c, 2, 3, 2)))
    k = _t(rng.standard_normal((c, o, 2, 2, 2)))
    b = _t(rng.standard_normal(o))
    w = rng.standard_normal((1, o, 4, 6, 4))
    return lambda x, k, b: (ops.conv_transpose3d_raw(x, k, b) * Tensor(w)).sum(), [x, k, b]


def _bn_case(rng):
    c = int(rng.integers(1, 4))
    x = _t(rng.standard_normal((2, c, 3, 3, 2)) * 2 + 1)
    g = _t(rng.uniform(0.5, 1.5, c))
    s = _t(rng.standard_normal(c))
    w = rng.standard_normal((2, c, 3, 3, 2))

    def frag(x, g, s):
        rm, rv = np.zeros(c), np.ones(c)
        return (ops.batch_norm_raw(x, g, s, rm, rv, training=True) * Tensor(w)).sum()

    return frag, [x, g, s]


def _relu_case(rng):
    x = _t(rng.standard_normal((1, 2, 4, 4, 4)))
    k = _t(rng.standard_normal((2, 2, 3, 3, 3)))
    return lambda x, k: ops.relu(ops.conv3d_raw(x, k)).mean(), [x, k]


def _wce_case(rng):
    c = int(rng.choice([2, 6]))
    z = _t(rng.standard_normal((1, c, 2, 3, 2)) * 2)
    y = rng.integers(0, c, (1, 2, 3, 2))
    w = rng.uniform(0.1, 3.0, c)
    return lambda z: weighted_cross_entropy(z, y, w), [z]


def _mse_case(rng):
    p = _t(rng.standard_normal((3, 6)))
    t = rng.standard_normal((3, 6))
    return lambda p: mse_loss(p, t), [p]


def _iou_case(rng):
    lo = rng.uniform(-5, 5, (2, 3))
    t = np.concatenate([lo, lo + rng.uniform(2, 8, (2, 3))], axis=1)
    p = _t(t + rng.uniform(-0.8, 0.8, t.shape))
    return lambda p: iou_loss_3d(p, t).loss, [p]


GRADIENT_CASES = {
    "conv3d": _conv_case,
    "transposed_conv3d": _deconv_case,
    "batch_norm3d": _bn_case,
    "relu_composite": _relu_case,
    "softmax_weighted_ce": _wce_case,
    "mse_loss": _mse_case,
    "iou_loss_3d": _iou_case,
}


def gradient_suite(trials=20, seed=0, tolerance=1e-4):
    """Per operation: (worst relative error, trials passed, trials run)."""
    out = {}
    for name, build in GRADIENT_CASES.items():
        worst, passed = 0.0, 0
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, len(name)])
            frag, inputs = build(rng)
            rep = finite_difference_check(frag, inputs, tolerance=tolerance, step=1e-5)
            ok = rep.passed and rep.excluded <= max(1, rep.checked // 10)
            worst = max(worst, rep.max_rel_error if rep.checked else math.inf)
            passed += ok
        out[name] = (worst, passed, trials)
    return out


@contextlib.contextmanager
def corrupted_gradients(factor=1.01):
    """Scale every gradient contribution; used to prove the checks can fail."""
    original = _TensorClass.accumulate

    def accumulate(self, g):
        return original(self, np.asarray(g) * factor)

    _TensorClass.accumulate = accumulate
    try:
        yield
    finally:
        _TensorClass.accumulate = original


def _brute_surface(mask, spacing):
    pts = []
    for idx in itertools.product(*map(range, mask.shape)):
        if not mask[idx]:
            continue
        for axis, step in itertools.product(range(3), (-1, 1)):
            nb = list(idx)
            nb[axis] += step
            if not 0 <= nb[axis] < mask.shape[axis] or not mask[tuple(nb)]:
                pts.append(np.multiply(idx, spacing))
                break
    return np.array(pts)


def metric_suite(cases=100, seed=0):
    """Worst deviation of the fast metrics from pairwise brute force."""
    worst = 0.0
    for case in range(cases):
        rng = np.random.default_rng([seed, case])
        shape = tuple(int(n) for n in rng.integers(2, 11, 3))
        a, b = rng.random(shape) < 0.3, rng.random(shape) < 0.3
        a.flat[0] = b.flat[-1] = True
        spacing = rng.uniform(0.3, 2.5, 3)
        inter, na, nb = int((a & b).sum()), int(a.sum()), int(b.sum())
        if dice(a, b) != 2 * inter / (na + nb) or jaccard(a, b) != inter / int((a | b).sum()):
            return math.inf
        sa, sb = extract_surface(a, spacing), extract_surface(b, spacing)
        ba, bb = _brute_surface(a, spacing), _brute_surface(b, spacing)
        d = np.sqrt(((ba[:, None, :] - bb[None, :, :]) ** 2).sum(axis=2))
        hd = max(d.min(axis=1).max(), d.min(axis=0).max())
        asd = (d.min(axis=1).sum() + d.min(axis=0).sum()) / (len(ba) + len(bb))
        worst = max(worst, abs(hausdorff(sa, sb) - hd), abs(assd(sa, sb) - asd))
    return worst


def kde_suite(trials=20, votes=500, sigma=2.0):
    """Number of trials whose density mode lands within one voxel of the true corner on every axis."""
    hits = 0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        truth = rng.uniform(10, 50, 3)
        hits += bool(np.all(np.abs(density_mode(truth + rng.normal(0, sigma, (votes, 3))) - truth) <= 1.0))
    return hits


def run_selfcheck(corrupt=False, trials=20):
    results = []
    ctx = corrupted_gradients() if corrupt else contextlib.nullcontext()
    with ctx:
        for name, (worst, passed, total) in gradient_suite(trials).items():
            results.append(CheckResult(f"gradient {name}", passed == total,
                                       f"{passed}/{total} trials, worst relative error {worst:.2e}"))
    dev = metric_suite()
    results.append(CheckResult("metric oracles", dev <= 1e-9, f"max deviation {dev:.2e}"))
    hits = kde_suite()
    results.append(CheckResult("kde recovery", hits >= 19, f"{hits}/20 within one voxel"))
    return results
