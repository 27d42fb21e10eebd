"""Layer parameter containers and the layer-level entry points used by both networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Tensor

CONV_BN = "conv_bn"  # 3x3x3 conv -> BN -> ReLU
CONV = "conv"  # plain conv (4x4x4 reduction, 1x1x1 heads)
DECONV = "deconv"  # 2x2x2 stride-2 transposed conv
LAYER_KINDS = (CONV_BN, CONV, DECONV)


@dataclass
class LayerParams:
    """Weights of one layer; BN fields are ``None`` unless ``kind == CONV_BN``."""

    kind: str
    kernel: Tensor
    bias: Tensor
    bn_scale: Optional[Tensor] = None
    bn_shift: Optional[Tensor] = None
    bn_running_mean: Optional[np.ndarray] = None
    bn_running_var: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.bn_running_var is not None and np.any(self.bn_running_var <= 0):
            raise ValueError("bn_running_var must be strictly positive")

    @property
    def out_channels(self):
        return self.kernel.shape[1] if self.kind == DECONV else self.kernel.shape[0]

    def trainable(self):
        """``(suffix, tensor)`` pairs for the optimizer."""
        items = [("kernel", self.kernel), ("bias", self.bias)]
        if self.kind == CONV_BN:
            items += [("bn_scale", self.bn_scale), ("bn_shift", self.bn_shift)]
        return items

    def buffers(self):
        if self.kind != CONV_BN:
            return []
        return [("bn_running_mean", self.bn_running_mean), ("bn_running_var", self.bn_running_var)]


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_conv(rng, in_channels, out_channels, kernel=3, kind=CONV_BN, dtype=np.float32, zero=False):
    """He-initialised conv layer (zero biases, BN scale 1 / shift 0)."""
    ks = (kernel,) * 3 if np.isscalar(kernel) else tuple(kernel)
    shape = (out_channels, in_channels) + ks
    fan_in = in_channels * int(np.prod(ks))
    w = np.zeros(shape, dtype) if zero else he_normal(rng, shape, fan_in, dtype)
    params = LayerParams(kind=kind, kernel=Tensor(w, requires_grad=True),
                         bias=Tensor(np.zeros(out_channels, dtype), requires_grad=True))
    if kind == CONV_BN:
        params.bn_scale = Tensor(np.ones(out_channels, dtype), requires_grad=True)
        params.bn_shift = Tensor(np.zeros(out_channels, dtype), requires_grad=True)
        params.bn_running_mean = np.zeros(out_channels, dtype)
        params.bn_running_var = np.ones(out_channels, dtype)
    return params


def init_deconv(rng, in_channels, out_channels, dtype=np.float32):
    shape = (in_channels, out_channels, 2, 2, 2)
    # each output voxel receives exactly one tap per input channel
    w = he_normal(rng, shape, in_channels, dtype)
    return LayerParams(kind=DECONV, kernel=Tensor(w, requires_grad=True),
                       bias=Tensor(np.zeros(out_channels, dtype), requires_grad=True))


def conv3d(x, params, padding="same"):
    return ops.conv3d_raw(x, params.kernel, params.bias, padding=padding)


def transposed_conv3d(x, params):
    if params.kind != DECONV:
        raise ShapeError(f"transposed_conv3d needs a {DECONV!r} layer, got {params.kind!r}")
    return ops.conv_transpose3d_raw(x, params.kernel, params.bias)


def batch_norm3d(x, params, mode="train"):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return ops.batch_norm_raw(x, params.bn_scale, params.bn_shift, params.bn_running_mean,
                              params.bn_running_var, training=(mode == "train"))


def conv_bn_relu(x, params, mode="train"):
    return ops.relu(batch_norm3d(conv3d(x, params), params, mode))


class Network:
    """Ordered collection of named :class:`LayerParams`.

    Subclasses build ``self.layers`` and implement ``forward``. Parameter and
    buffer names are ``"<layer>.<field>"``, which is also the checkpoint key.
    """

    def __init__(self):
        self.layers = {}

    def named_parameters(self):
        for lname, layer in self.layers.items():
            for suffix, t in layer.trainable():
                yield f"{lname}.{suffix}", t

    def named_buffers(self):
        for lname, layer in self.layers.items():
            for suffix, arr in layer.buffers():
                yield f"{lname}.{suffix}", arr

    def parameters(self):
        return dict(self.named_parameters())

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.zero_grad()

    def state_dict(self):
        state = {name: t.data for name, t in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state, skip=()):
        own = self.state_dict()
        for name, target in own.items():
            if any(name.startswith(prefix) for prefix in skip):
                continue
            if name not in state:
                raise KeyError(f"state is missing {name!r}")
            src = np.asarray(state[name])
            if src.shape != target.shape:
                raise ShapeError(f"{name}: stored shape {src.shape} != network shape {target.shape}")
            target[...] = src

    def __call__(self, x, mode="train"):
        return self.forward(x, mode)
