"""Cascaded 3D fully convolutional lumbar vertebra segmentation on synthetic phantoms."""

__version__ = "0.1.0"
