"""The regression FCN mapping a 32^3 patch to two corner displacement vectors."""

from __future__ import annotations

import numpy as np

from ..autodiff import CONV, Network, conv3d, conv_bn_relu, init_conv, maxpool3d, relu
from ..errors import ShapeError

OUTPUTS = 6


class LocalizationNet(Network):
    """Three ``[conv-BN-ReLU, conv-BN-ReLU, maxpool]`` stages, a valid 4^3 conv
    down to ``reduction_width`` features at 1^3, then two 1^3 convs ending in 6
    channels ``(d_low, d_high)``."""

    def __init__(self, widths=(16, 32, 64), reduction_width=512, hidden_width=128, patch_size=32, seed=0,
                 dtype=np.float32, zero_output=False):
        super().__init__()
        if len(widths) != 3:
            raise ValueError("LocalizationNet has exactly three encoder stages")
        if patch_size % 8:
            raise ShapeError(f"patch size {patch_size} is not divisible by 8")
        self.patch_size = patch_size
        self.config = {"widths": list(widths), "reduction_width": reduction_width, "hidden_width": hidden_width,
                       "patch_size": patch_size}
        rng = np.random.default_rng([seed, 0x10C])
        cin = 1
        for i, width in enumerate(widths):
            self.layers[f"enc{i}_a"] = init_conv(rng, cin, width, dtype=dtype)
            self.layers[f"enc{i}_b"] = init_conv(rng, width, width, dtype=dtype)
            cin = width
        self.layers["reduce"] = init_conv(rng, cin, reduction_width, kernel=patch_size // 8, kind=CONV, dtype=dtype)
        self.layers["hidden"] = init_conv(rng, reduction_width, hidden_width, kernel=1, kind=CONV, dtype=dtype)
        self.layers["out"] = init_conv(rng, hidden_width, OUTPUTS, kernel=1, kind=CONV, dtype=dtype,
                                       zero=zero_output)
        self.feature_shape = None

    def forward(self, x, mode="train"):
        if x.ndim != 5 or x.shape[1] != 1 or x.shape[2:] != (self.patch_size,) * 3:
            raise ShapeError(f"LocalizationNet expects (N, 1, {self.patch_size}, {self.patch_size}, "
                             f"{self.patch_size}) input, got {x.shape}")
        for i in range(3):
            x = conv_bn_relu(x, self.layers[f"enc{i}_a"], mode)
            x = conv_bn_relu(x, self.layers[f"enc{i}_b"], mode)
            x, _ = maxpool3d(x)
        self.feature_shape = x.shape
        x = relu(conv3d(x, self.layers["reduce"], padding="valid"))
        x = relu(conv3d(x, self.layers["hidden"], padding="valid"))
        x = conv3d(x, self.layers["out"], padding="valid")
        return x.reshape(x.shape[0], OUTPUTS)
