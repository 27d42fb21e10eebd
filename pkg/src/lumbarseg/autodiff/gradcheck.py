"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int
    tolerance: float
    excluded_points: list = field(default_factory=list)  # (input index, flat index)

    @property
    def passed(self):
        return self.checked > 0 and self.max_rel_error < self.tolerance


def finite_difference_check(fragment, inputs, tolerance=1e-4, step=1e-3, max_probes=None, seed=0,
                            kink_threshold=0.1):
    """Compare ``fragment``'s reverse-mode gradients with central differences.

    ``fragment(*inputs)`` must return a single-valued tensor. Each probed
    coordinate is perturbed by ``±step``. Where the forward and backward
    one-sided slopes disagree by more than ``kink_threshold`` (relative) the
    coordinate sits on a kink (ReLU at zero, a max-pool tie) and is reported
    as excluded instead of compared.

    The relative error of a coordinate is ``|a - n| / (max(|a|, |n|) + 1e-3 * s)``
    with ``s`` the largest numeric gradient magnitude, so components that are
    negligible against the gradient's scale do not dominate the report.
    """
    for t in inputs:
        t.zero_grad()
        t.requires_grad = True
    out = fragment(*inputs)
    if out.size != 1:
        raise ValueError("fragment must be scalar-valued")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def f():
        return float(fragment(*inputs).data)

    rng = np.random.default_rng(seed)
    probes = [(k, i) for k, t in enumerate(inputs) for i in range(t.size)]
    if max_probes is not None and len(probes) > max_probes:
        picks = rng.choice(len(probes), size=max_probes, replace=False)
        probes = [probes[j] for j in sorted(picks)]

    f0 = f()
    numeric, excluded = [], []
    for k, i in probes:
        flat = inputs[k].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        fwd, bwd = (fp - f0) / step, (f0 - fm) / step
        if abs(fwd - bwd) > kink_threshold * max(abs(fwd), abs(bwd), 1e-12):
            excluded.append((k, i))
            continue
        numeric.append((k, i, (fp - fm) / (2 * step)))

    if not numeric:
        return GradCheckReport(float("nan"), 0, len(excluded), tolerance, excluded)
    num = np.array([n for _, _, n in numeric])
    ana = np.array([analytic[k].reshape(-1)[i] for k, i, _ in numeric])
    scale = np.abs(num).max()
    err = np.abs(ana - num) / (np.maximum(np.abs(ana), np.abs(num)) + 1e-3 * scale + 1e-300)
    return GradCheckReport(float(err.max()), len(numeric), len(excluded), tolerance, excluded)
