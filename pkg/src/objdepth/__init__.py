"""Monocular depth estimation conditioned on detected objects via cross-attention."""

from .binning import DepthRaster, bin_centres, expected_depth, normalize_widths, upsample_bilinear
from .config import AttentionConfig, ModelConfig
from .metrics import MetricSet, compute_metrics
from .model import ObjectDepthNet

__all__ = [
    "AttentionConfig",
    "DepthRaster",
    "MetricSet",
    "ModelConfig",
    "ObjectDepthNet",
    "bin_centres",
    "compute_metrics",
    "expected_depth",
    "normalize_widths",
    "upsample_bilinear",
]
__version__ = "0.1.0"
