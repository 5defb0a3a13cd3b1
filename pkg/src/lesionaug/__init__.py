"""Class balancing, max-RGB normalization and ensemble scoring for dermoscopic image sets."""

from .balancer import AugmentationPlan, plan_auto, plan_from_factors, rotation_angles
from .evalkit import EnsembleConfig, ProbabilityMatrix, balanced_accuracy, confusion, fuse, predict
from .imgops import hflip, max_rgb_normalize, rotate
from .manifest import ClassCounts, ClassLabel, DataError, DatasetManifest, class_counts, parse_ground_truth

__all__ = [
    "AugmentationPlan",
    "ClassCounts",
    "ClassLabel",
    "DataError",
    "DatasetManifest",
    "EnsembleConfig",
    "ProbabilityMatrix",
    "balanced_accuracy",
    "class_counts",
    "confusion",
    "fuse",
    "hflip",
    "max_rgb_normalize",
    "parse_ground_truth",
    "plan_auto",
    "plan_from_factors",
    "predict",
    "rotate",
    "rotation_angles",
]
