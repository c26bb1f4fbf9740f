from .augment import AugmentConfig, augment_sample, resize_bilinear, resize_nearest
from .manifest import DatasetManifest, Sample, compute_norm_stats, load_manifest
from .normalize import ChannelStandardizer, NormStats, denormalize, normalize, stats_from_images
from .synth import SynthSpec, make_sample, synth_arrays, synth_generate
from .tiling import TileGrid, stitch, tile

__all__ = [
    "AugmentConfig", "augment_sample", "resize_bilinear", "resize_nearest",
    "DatasetManifest", "Sample", "compute_norm_stats", "load_manifest",
    "ChannelStandardizer", "NormStats", "denormalize", "normalize", "stats_from_images",
    "SynthSpec", "make_sample", "synth_arrays", "synth_generate",
    "TileGrid", "stitch", "tile",
]
