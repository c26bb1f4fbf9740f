"""Per-channel z-score statistics and normalization."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import EmptyDataset, ShapeMismatch
from ..raster import RasterImage

MIN_STD = 1e-6


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @property
    def channels(self) -> int:
        return len(self.mean)

    def to_json(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_json(cls, obj: dict) -> NormStats:
        return cls(tuple(float(v) for v in obj["mean"]), tuple(float(v) for v in obj["std"]))

    @classmethod
    def identity(cls, channels: int) -> NormStats:
        return cls((0.0,) * channels, (1.0,) * channels)


def stats_from_images(images: Iterable) -> NormStats:
    """Mean and population std per channel over every pixel of ``images``.

    Per-image partial sums are accumulated in float64 and combined with
    ``math.fsum``, so the result does not depend on iteration order.
    """
    sums: list[list[float]] = []
    sqs: list[list[float]] = []
    count = 0
    channels = None
    for img in images:
        data = img.data if isinstance(img, RasterImage) else np.asarray(img)
        if channels is None:
            channels = data.shape[0]
        elif data.shape[0] != channels:
            raise ShapeMismatch(f"channel count changed from {channels} to {data.shape[0]}", field="bands")
        flat = data.reshape(channels, -1).astype(np.float64)
        sums.append(flat.sum(axis=1).tolist())
        sqs.append((flat * flat).sum(axis=1).tolist())
        count += flat.shape[1]
    if channels is None or count == 0:
        raise EmptyDataset("no training pixels to compute normalization statistics")
    mean = [math.fsum(s[c] for s in sums) / count for c in range(channels)]
    var = [max(math.fsum(s[c] for s in sqs) / count - mean[c] ** 2, 0.0) for c in range(channels)]
    std = [max(math.sqrt(v), MIN_STD) for v in var]
    return NormStats(tuple(mean), tuple(std))


def normalize(image, stats: NormStats):
    """``(x - mean) / std`` per channel, as float32."""
    data = image.data if isinstance(image, RasterImage) else np.asarray(image)
    if data.shape[-3] != stats.channels:
        raise ShapeMismatch(f"image has {data.shape[-3]} channels, stats have {stats.channels}", field="norm_stats")
    mean = np.asarray(stats.mean, np.float64)[:, None, None]
    std = np.asarray(stats.std, np.float64)[:, None, None]
    out = ((data.astype(np.float64) - mean) / std).astype(np.float32)
    return image.with_data(out) if isinstance(image, RasterImage) else out


def denormalize(image, stats: NormStats):
    data = image.data if isinstance(image, RasterImage) else np.asarray(image)
    if data.shape[-3] != stats.channels:
        raise ShapeMismatch(f"image has {data.shape[-3]} channels, stats have {stats.channels}", field="norm_stats")
    mean = np.asarray(stats.mean, np.float64)[:, None, None]
    std = np.asarray(stats.std, np.float64)[:, None, None]
    out = (data.astype(np.float64) * std + mean).astype(np.float32)
    return image.with_data(out) if isinstance(image, RasterImage) else out


class ChannelStandardizer(TransformerMixin, BaseEstimator):
    """Fit per-channel mean/std on an (N, C, H, W) stack and standardize."""

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 4:
            raise ShapeMismatch(f"expected (N, C, H, W), got {X.shape}", field="X")
        self.stats_ = stats_from_images(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return normalize(np.asarray(X), self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return denormalize(np.asarray(X), self.stats_)
