"""Seedable image transformations for training-time augmentation and TTA."""

from .geometry import (
    ImageError,
    hflip,
    random_resized_crop,
    resample_box,
    resize_bilinear,
    sample_crop_box,
    warp_affine,
)
from .ops import OP_KINDS, apply_op
from .pipeline import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    AugmentConfig,
    ConfigError,
    MixedTarget,
    augment_batch,
    augment_train,
    cutmix_pair,
    denormalize,
    normalize,
)
from .policy import (
    PolicyError,
    SubPolicy,
    autoaugment,
    identity_policy,
    imagenet_policy,
    load_policy,
    resolve_policy,
)
from .ppm import read_ppm, write_ppm

__all__ = [
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "OP_KINDS",
    "AugmentConfig",
    "ConfigError",
    "ImageError",
    "MixedTarget",
    "PolicyError",
    "SubPolicy",
    "apply_op",
    "augment_batch",
    "augment_train",
    "autoaugment",
    "cutmix_pair",
    "denormalize",
    "hflip",
    "identity_policy",
    "imagenet_policy",
    "load_policy",
    "normalize",
    "random_resized_crop",
    "read_ppm",
    "resample_box",
    "resize_bilinear",
    "resolve_policy",
    "sample_crop_box",
    "warp_affine",
    "write_ppm",
]
