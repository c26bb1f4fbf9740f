"""Channel shuffling pre-training toolkit."""
from __future__ import annotations

from .csp import Baseline, ChannelShuffler, Csp, CspConfig, csp_transform, draw_channel_plan
from .estimators import CSPClassifier, CSPSegmenter
from .models import Checkpoint, build_classifier, build_segmenter, load_checkpoint, save_checkpoint
from .raster import RasterImage, load_raster, save_raster

__version__ = "0.1.0"

__all__ = [
    "Baseline", "CSPClassifier", "CSPSegmenter", "ChannelShuffler", "Checkpoint", "Csp", "CspConfig",
    "RasterImage", "build_classifier", "build_segmenter", "csp_transform", "draw_channel_plan",
    "load_checkpoint", "load_raster", "save_checkpoint", "save_raster",
]
