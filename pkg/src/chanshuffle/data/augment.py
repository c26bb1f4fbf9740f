"""Random resize, crop and horizontal flip, driven by explicit draw keys."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig
from ..raster import RasterImage
from ..rng import numpy_rng

DEFAULT_SCALES = (0.5, 0.75, 1.0, 1.5, 1.75)
IGNORE_INDEX = 255
_AUGMENT_STREAM = 0xA5


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int
    scales: tuple[float, ...] = DEFAULT_SCALES
    flip_prob: float = 0.5
    ignore_index: int = IGNORE_INDEX
    seed: int = 0

    def __post_init__(self):
        if self.crop_size < 1:
            raise InvalidConfig("crop_size must be positive", field="crop_size")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise InvalidConfig("scales must be a non-empty set of positive numbers", field="scales")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidConfig("flip_prob must lie in [0, 1]", field="flip_prob")


def _source_coords(out_size: int, in_size: int) -> np.ndarray:
    # half-pixel centres, so an equal-size resize maps every pixel to itself
    return (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array; output is float32."""
    c, h, w = data.shape
    if (out_h, out_w) == (h, w):
        return data.astype(np.float32)
    ys = np.clip(_source_coords(out_h, h), 0, h - 1)
    xs = np.clip(_source_coords(out_w, w), 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    d = data.astype(np.float64)
    top = d[:, y0][:, :, x0] * (1 - wx) + d[:, y0][:, :, x1] * wx
    bot = d[:, y1][:, :, x0] * (1 - wx) + d[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of an (H, W) label map; only copies source values."""
    h, w = mask.shape
    ys = np.clip(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(int), 0, h - 1)
    xs = np.clip(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(int), 0, w - 1)
    return mask[ys][:, xs]


@dataclass(frozen=True)
class AugmentDraw:
    scale: float
    offset: tuple[int, int]
    flip: bool


def draw_augment(cfg: AugmentConfig, draw_key: tuple[int, int], height: int, width: int,
                 scale: float | None = None) -> AugmentDraw:
    """The random choices for one sample; offsets are uniform over valid crops."""
    rng = numpy_rng(cfg.seed, _AUGMENT_STREAM, *draw_key)
    drawn = float(cfg.scales[int(rng.integers(len(cfg.scales)))])
    scale = drawn if scale is None else scale
    sh, sw = scaled_size(height, width, scale)
    top = int(rng.integers(max(sh - cfg.crop_size, 0) + 1))
    left = int(rng.integers(max(sw - cfg.crop_size, 0) + 1))
    flip = bool(rng.random() < cfg.flip_prob)
    return AugmentDraw(scale, (top, left), flip)


def scaled_size(height: int, width: int, scale: float) -> tuple[int, int]:
    return max(1, int(round(height * scale))), max(1, int(round(width * scale)))


def augment_sample(image, mask, cfg: AugmentConfig, draw_key: tuple[int, int], *,
                   scale: float | None = None, offset: tuple[int, int] | None = None,
                   flip: bool | None = None):
    """Resize by a random scale, crop ``crop_size`` square, maybe flip.

    ``image`` is a RasterImage or (C, H, W) array; ``mask`` is an (H, W)
    label map or None (classification).  When the scaled image is smaller
    than the crop it is padded bottom/right with its channel means and the
    mask with ``ignore_index``.  Keyword overrides pin individual choices.
    """
    data = image.data if isinstance(image, RasterImage) else np.asarray(image)
    c, h, w = data.shape
    if mask is not None and np.asarray(mask).shape != (h, w):
        raise InvalidConfig(f"mask shape {np.asarray(mask).shape} != image size {(h, w)}", field="mask")
    d = draw_augment(cfg, draw_key, h, w, scale)
    scale = d.scale
    flip = d.flip if flip is None else flip
    offset = d.offset if offset is None else offset
    sh, sw = scaled_size(h, w, scale)

    img = resize_bilinear(data, sh, sw) if (sh, sw) != (h, w) else data
    msk = None if mask is None else resize_nearest(np.asarray(mask), sh, sw)

    p = cfg.crop_size
    if sh < p or sw < p:
        means = img.reshape(c, -1).astype(np.float64).mean(axis=1)
        canvas = np.empty((c, max(sh, p), max(sw, p)), dtype=np.float32)
        canvas[:] = means[:, None, None]
        canvas[:, :sh, :sw] = img
        img = canvas
        if msk is not None:
            mcanvas = np.full((max(sh, p), max(sw, p)), cfg.ignore_index, dtype=msk.dtype)
            mcanvas[:sh, :sw] = msk
            msk = mcanvas
    top, left = offset
    top = min(max(top, 0), img.shape[1] - p)
    left = min(max(left, 0), img.shape[2] - p)
    img = img[:, top:top + p, left:left + p]
    if msk is not None:
        msk = msk[top:top + p, left:left + p]
    if flip:
        img = img[:, :, ::-1]
        if msk is not None:
            msk = msk[:, ::-1]
    img = np.ascontiguousarray(img)
    msk = None if msk is None else np.ascontiguousarray(msk)
    if isinstance(image, RasterImage):
        return image.with_data(img), msk
    return img, msk
