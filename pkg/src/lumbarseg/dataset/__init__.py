"""Volumes, file I/O, phantom generation, augmentation and patch sampling."""

from .augment import (apply_displacement, apply_gray, elastic_deform, gray_value_augment, random_displacement,
                      roi_augment)
from .patches import Patch, extract_centered, pad_to_extent, sample_training_patches
from .phantom import PhantomSpec, case_name, gen_phantom, list_cases, read_case, write_case
from .volume import (BoundingBox3D, LabelVolume, Volume, crop, crop_slices, load_box, load_volume, save_box,
                     save_volume)

__all__ = [
    "BoundingBox3D", "LabelVolume", "Patch", "PhantomSpec", "Volume", "apply_displacement", "apply_gray",
    "case_name", "crop", "crop_slices", "elastic_deform", "extract_centered", "gen_phantom", "gray_value_augment",
    "list_cases", "load_box", "load_volume", "pad_to_extent", "random_displacement", "read_case", "roi_augment",
    "sample_training_patches", "save_box", "save_volume", "write_case",
]
