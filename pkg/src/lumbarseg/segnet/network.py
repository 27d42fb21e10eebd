"""U-net style encoder/decoder with same-padded convolutions and equal-resolution shortcuts."""

from __future__ import annotations

import numpy as np

from ..autodiff import CONV, Network, Tensor, concat, conv3d, conv_bn_relu, init_conv, init_deconv, maxpool3d
from ..autodiff import transposed_conv3d
from ..errors import ShapeError

HEAD = "head"
CLASS_COUNTS = (2, 6)


class SegmentationNet(Network):
    """``depth`` pooling levels; level ``l`` carries ``base_width * 2**l`` channels.

    Encoder block: two conv-BN-ReLU then 2x max pooling. Decoder block:
    stride-2 transposed conv, concatenation with the encoder features of the
    same resolution, two conv-BN-ReLU. A 1^3 conv maps to class logits.
    """

    def __init__(self, depth=3, base_width=16, class_count=2, seed=0, dtype=np.float32, zero_head=False):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be at least 1")
        if class_count not in CLASS_COUNTS:
            raise ValueError(f"class_count must be one of {CLASS_COUNTS}, got {class_count}")
        self.depth, self.base_width, self.class_count = depth, base_width, class_count
        self.config = {"depth": depth, "base_width": base_width, "class_count": class_count}
        rng = np.random.default_rng([seed, 0x5E6])
        widths = [base_width * 2 ** level for level in range(depth + 1)]
        cin = 1
        for level in range(depth):
            self.layers[f"enc{level}_a"] = init_conv(rng, cin, widths[level], dtype=dtype)
            self.layers[f"enc{level}_b"] = init_conv(rng, widths[level], widths[level], dtype=dtype)
            cin = widths[level]
        self.layers["bottom_a"] = init_conv(rng, cin, widths[depth], dtype=dtype)
        self.layers["bottom_b"] = init_conv(rng, widths[depth], widths[depth], dtype=dtype)
        for level in reversed(range(depth)):
            self.layers[f"up{level}"] = init_deconv(rng, widths[level + 1], widths[level], dtype=dtype)
            self.layers[f"dec{level}_a"] = init_conv(rng, 2 * widths[level], widths[level], dtype=dtype)
            self.layers[f"dec{level}_b"] = init_conv(rng, widths[level], widths[level], dtype=dtype)
        self.layers[HEAD] = self.new_head(class_count, seed, zero=zero_head)

    def new_head(self, class_count, seed=0, zero=False):
        rng = np.random.default_rng([seed, 0x4EAD, class_count])
        return init_conv(rng, self.base_width, class_count, kernel=1, kind=CONV,
                         dtype=self.layers["enc0_a"].kernel.dtype, zero=zero)

    def check_extents(self, extents):
        step = 2 ** self.depth
        if any(e % step for e in extents):
            raise ShapeError(f"patch extents {tuple(extents)} are not divisible by 2^depth = {step}")

    def forward(self, x, mode="train", ablate_skip=None):
        """Class logits with the input's spatial extents.

        ``ablate_skip`` replaces the shortcut at that level with zeros, which
        exists only to test connectivity.
        """
        if x.ndim != 5 or x.shape[1] != 1:
            raise ShapeError(f"SegmentationNet expects (N, 1, D, H, W) input, got {x.shape}")
        self.check_extents(x.shape[2:])
        skips = []
        for level in range(self.depth):
            x = conv_bn_relu(x, self.layers[f"enc{level}_a"], mode)
            x = conv_bn_relu(x, self.layers[f"enc{level}_b"], mode)
            skips.append(x)
            x, _ = maxpool3d(x)
        x = conv_bn_relu(x, self.layers["bottom_a"], mode)
        x = conv_bn_relu(x, self.layers["bottom_b"], mode)
        for level in reversed(range(self.depth)):
            x = transposed_conv3d(x, self.layers[f"up{level}"])
            skip = skips[level]
            if ablate_skip == level:
                skip = Tensor(np.zeros_like(skip.data))
            x = concat([x, skip], axis=1)
            x = conv_bn_relu(x, self.layers[f"dec{level}_a"], mode)
            x = conv_bn_relu(x, self.layers[f"dec{level}_b"], mode)
        return conv3d(x, self.layers[HEAD], padding="valid")
