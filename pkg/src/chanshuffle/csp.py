"""Channel shuffling with duplication and truncation, plus band manipulation.

A source image with ``m`` channels is turned into an ``n``-channel model
input: the channel list is repeated ``x = ceil(n / m)`` times, shuffled
with a seeded Fisher-Yates pass, and the first ``n`` entries are kept.
Every output plane is a bitwise copy of one source plane.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import InvalidConfig, ShapeMismatch, UnknownBand
from .raster import RasterImage, base_band_name, disambiguate
from .rng import SplitMix64, fisher_yates, mix64

REDRAW_MODES = ("sample", "image")


def duplication_factor(m: int, n: int) -> int:
    """Smallest ``x`` with ``x * m >= n``."""
    if m < 1 or n < 1:
        raise InvalidConfig(f"channel counts must be positive (m={m}, n={n})", field="m" if m < 1 else "n")
    return -(-n // m)


@dataclass(frozen=True)
class CspConfig:
    m: int
    n: int
    global_seed: int = 0
    redraw: str = "sample"

    def __post_init__(self):
        duplication_factor(self.m, self.n)
        if not 0 <= self.global_seed < 2 ** 64:
            raise InvalidConfig("global_seed must be an unsigned 64-bit integer", field="global_seed")
        if self.redraw not in REDRAW_MODES:
            raise InvalidConfig(f"redraw must be one of {REDRAW_MODES}", field="redraw")

    @property
    def x(self) -> int:
        return duplication_factor(self.m, self.n)

    @property
    def tag(self) -> str:
        return f"CSP-{self.n}"


@dataclass(frozen=True)
class Baseline:
    """Fixed natural channel order."""

    tag = "Baseline"


@dataclass(frozen=True)
class Csp:
    config: CspConfig

    @property
    def tag(self) -> str:
        return self.config.tag


PretrainStrategy = Union[Baseline, Csp]


@dataclass(frozen=True)
class ChannelPlan:
    """Ordered source-channel indices, one per model input channel."""

    sources: tuple[int, ...]

    def counts(self, m: int) -> list[int]:
        out = [0] * m
        for s in self.sources:
            out[s] += 1
        return out

    def __len__(self) -> int:
        return len(self.sources)


def plan_seed(cfg: CspConfig, draw_key: tuple[int, int]) -> int:
    epoch, sample_index = draw_key
    if cfg.redraw == "image":
        epoch = 0
    return mix64(cfg.global_seed, epoch, sample_index)


def draw_channel_plan(cfg: CspConfig, draw_key: tuple[int, int],
                      permute: Callable[[list, SplitMix64], list] | None = None) -> ChannelPlan:
    """Draw the plan for one (epoch, sample_index) key.

    ``permute`` replaces the Fisher-Yates pass; it exists so tests can pin
    the deck order (pass ``lambda deck, rng: deck`` for no shuffle).
    """
    deck = list(range(cfg.m)) * cfg.x
    rng = SplitMix64(plan_seed(cfg, draw_key))
    deck = (permute or fisher_yates)(deck, rng)
    return ChannelPlan(tuple(int(s) for s in deck[:cfg.n]))


def apply_plan(image: RasterImage, plan: ChannelPlan) -> RasterImage:
    if not plan.sources:
        raise ShapeMismatch("empty channel plan", field="plan")
    if max(plan.sources) >= image.channels or min(plan.sources) < 0:
        raise ShapeMismatch(f"plan {plan.sources} does not fit a {image.channels}-channel image", field="plan")
    idx = np.asarray(plan.sources)
    bands = disambiguate([base_band_name(image.bands[s]) for s in plan.sources])
    return RasterImage(image.data[idx], bands)


def csp_transform(image: RasterImage, cfg: CspConfig, draw_key: tuple[int, int]) -> RasterImage:
    if image.channels != cfg.m:
        raise ShapeMismatch(f"image has {image.channels} channels, CSP config expects m={cfg.m}", field="m")
    return apply_plan(image, draw_channel_plan(cfg, draw_key))


def permute_channels(image: RasterImage, perm: Sequence[int]) -> RasterImage:
    """Reorder channels by a bijection ``perm`` (output j = input perm[j])."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(image.channels)):
        raise ShapeMismatch(f"{perm} is not a permutation of {image.channels} channels", field="permutation")
    return RasterImage(image.data[perm], tuple(image.bands[p] for p in perm))


def reverse_channels(image: RasterImage) -> RasterImage:
    return permute_channels(image, range(image.channels - 1, -1, -1))


def parse_band_list(names) -> list[str]:
    if isinstance(names, str):
        return [s.strip() for s in names.split(",") if s.strip()]
    return list(names)


def select_bands(image: RasterImage, names) -> RasterImage:
    """Keep the named bands in the requested order (``"IR,R,G"`` or a list)."""
    names = parse_band_list(names)
    lookup = {b: i for i, b in enumerate(image.bands)}
    for name in names:
        if name not in lookup:
            raise UnknownBand(f"unknown band {name!r}; available: {', '.join(image.bands)}", field=name)
    return RasterImage(image.data[[lookup[n] for n in names]], tuple(names))


# -- estimator wrappers ------------------------------------------------------

def _check_stack(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 4:
        raise ShapeMismatch(f"expected an (N, C, H, W) stack, got shape {X.shape}", field="X")
    return X


class ChannelShuffler(TransformerMixin, BaseEstimator):
    """Apply the duplicate-shuffle-truncate draw to an (N, C, H, W) stack.

    Row ``i`` of ``X`` uses draw key ``(epoch, offset + i)``; set ``epoch``
    (or pass it to :meth:`transform`) to get a fresh draw each pass.
    """

    def __init__(self, n_channels=3, *, seed=0, epoch=0, redraw="sample"):
        self.n_channels = n_channels
        self.seed = seed
        self.epoch = epoch
        self.redraw = redraw

    def fit(self, X, y=None):
        X = _check_stack(X)
        self.config_ = CspConfig(m=X.shape[1], n=self.n_channels, global_seed=self.seed, redraw=self.redraw)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, *, epoch=None, offset=0):
        check_is_fitted(self, "config_")
        X = _check_stack(X)
        if X.shape[1] != self.config_.m:
            raise ShapeMismatch(f"fitted on {self.config_.m} channels, got {X.shape[1]}", field="X")
        epoch = self.epoch if epoch is None else epoch
        plans = [draw_channel_plan(self.config_, (epoch, offset + i)).sources for i in range(len(X))]
        return X[np.arange(len(X))[:, None], np.asarray(plans, dtype=np.intp).reshape(len(X), -1)]

    def plans(self, n_samples, *, epoch=None, offset=0) -> list[ChannelPlan]:
        check_is_fitted(self, "config_")
        epoch = self.epoch if epoch is None else epoch
        return [draw_channel_plan(self.config_, (epoch, offset + i)) for i in range(n_samples)]


class ChannelPermuter(TransformerMixin, BaseEstimator):
    """Fixed channel permutation; ``permutation=None`` reverses the order."""

    def __init__(self, permutation=None):
        self.permutation = permutation

    def fit(self, X, y=None):
        X = _check_stack(X)
        c = X.shape[1]
        perm = list(range(c - 1, -1, -1)) if self.permutation is None else [int(p) for p in self.permutation]
        if sorted(perm) != list(range(c)):
            raise ShapeMismatch(f"{perm} is not a permutation of {c} channels", field="permutation")
        self.permutation_ = np.asarray(perm)
        self.n_features_in_ = c
        return self

    def transform(self, X):
        check_is_fitted(self, "permutation_")
        return _check_stack(X)[:, self.permutation_]


class BandSelector(TransformerMixin, BaseEstimator):
    """Select named bands from a stack whose channels are named ``band_names``."""

    def __init__(self, bands, band_names):
        self.bands = bands
        self.band_names = band_names

    def fit(self, X=None, y=None):
        names = list(self.band_names)
        wanted = parse_band_list(self.bands)
        missing = [b for b in wanted if b not in names]
        if missing:
            raise UnknownBand(f"unknown band {missing[0]!r}", field=missing[0])
        self.indices_ = np.asarray([names.index(b) for b in wanted])
        return self

    def transform(self, X):
        check_is_fitted(self, "indices_")
        X = _check_stack(X)
        if X.shape[1] != len(self.band_names):
            raise ShapeMismatch(f"expected {len(self.band_names)} channels, got {X.shape[1]}", field="X")
        return X[:, self.indices_]
