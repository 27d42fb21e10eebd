"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one Adam update in place and return ``state``.

    ``params`` maps names to tensors, ``grads`` maps the same names to arrays
    (``None`` skips a parameter). Every gradient is checked before anything is
    touched, so a non-finite value leaves parameters and moments unchanged.

    A parameter whose gradient is identically zero keeps its value; only its
    moments decay. Zero gradients are therefore always a fixed point.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            v = state.second_moment[name] = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if not np.any(g):
            continue
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data -= update.astype(p.data.dtype)
    return state


def step_network(net, state):
    """Adam step over every trainable tensor of ``net`` followed by zeroing grads."""
    params = net.parameters()
    grads = {name: t.grad for name, t in params.items()}
    adam_step(params, grads, state)
    net.zero_grad()


def cosine_lr(base, epoch, epochs, final_fraction=0.05):
    """Cosine decay from ``base`` at epoch 0 to ``base * final_fraction`` at the last epoch."""
    if epochs <= 1:
        return base
    t = epoch / (epochs - 1)
    return base * (final_fraction + (1 - final_fraction) * 0.5 * (1 + np.cos(np.pi * t)))
