"""Minimal reverse-mode tensor engine for the two volumetric networks."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, snapshot, tensor_digest
from .gradcheck import GradCheckReport, finite_difference_check
from .layers import (CONV, CONV_BN, DECONV, LayerParams, Network, batch_norm3d, conv3d, conv_bn_relu,
                     init_conv, init_deconv, transposed_conv3d)
from .ops import concat, maxpool3d, pool_has_ties, relu, softmax_channels
from .optim import AdamState, adam_step, cosine_lr, step_network
from .tensor import Tensor

__all__ = [
    "AdamState", "CONV", "CONV_BN", "Checkpoint", "DECONV", "GradCheckReport", "LayerParams", "Network",
    "Tensor", "adam_step", "batch_norm3d", "concat", "conv3d", "cosine_lr", "conv_bn_relu", "finite_difference_check",
    "init_conv", "init_deconv", "load_checkpoint", "maxpool3d", "pool_has_ties", "relu", "save_checkpoint",
    "snapshot", "softmax_channels", "step_network", "tensor_digest", "transposed_conv3d",
]
