"""Synthetic datasets that separate spatial from spectral class evidence.

``spatial-cue``
    Each class is a geometric texture (horizontal/vertical/diagonal stripes,
    checkers, blobs; higher class ids reuse the families at a finer period).
    The same texture is drawn in every channel; each channel gets its own
    random background and foreground level per sample, so absolute band
    values say nothing about the class.  The first ``ceil(C/2)`` channels
    show the texture bright-on-dark, the rest dark-on-bright, which gives
    the natural band order a consistent look that a model can latch onto.

``spectral-cue``
    Flat patches.  Class ``k`` orders the channel levels by the ``k``-th
    permutation of ``range(C)``, so permuting the channels turns one class
    signature into another.

``mixed``
    Textures as in spatial-cue, plus a spectral signature that only
    encodes the class parity; the texture is needed for full identity.

Segmentation variants tile the image into Voronoi regions, each with its
own class; a fraction of regions is "clutter" (random noise, label 255).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidConfig, IOFailure
from ..raster import RasterImage, save_raster
from ..rng import numpy_rng
from .manifest import DatasetManifest, Sample
from .normalize import stats_from_images

MODES = ("spatial-cue", "spectral-cue", "mixed")
TASKS = ("classification", "segmentation")
FAMILIES = ("hstripes", "vstripes", "checker", "blobs", "diag", "antidiag")
BAND_NAMES = {1: ["R"], 2: ["R", "G"], 3: ["R", "G", "B"], 4: ["R", "G", "B", "IR"],
              5: ["R", "G", "B", "IR", "DSM"]}
_SPLIT_STREAM = {"train": 1, "val": 2, "test": 3}


def band_names(channels: int) -> list[str]:
    return BAND_NAMES.get(channels, [f"B{i}" for i in range(channels)])


@dataclass(frozen=True)
class SynthSpec:
    mode: str = "spatial-cue"
    num_classes: int = 4
    size: int = 16
    channels: int = 3
    noise: float = 0.05
    n_train: int = 100
    n_val: int = 20
    n_test: int = 0
    seed: int = 0
    task: str = "classification"
    clutter_fraction: float = 0.1
    name: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}", field="mode")
        if self.task not in TASKS:
            raise InvalidConfig(f"task must be one of {TASKS}", field="task")
        if self.num_classes < 1 or self.channels < 1 or self.size < 4:
            raise InvalidConfig("need num_classes >= 1, channels >= 1, size >= 4", field="size")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise InvalidConfig("sample counts must be non-negative", field="n_train")
        if self.mode == "spectral-cue":
            perms = 1
            for i in range(2, self.channels + 1):
                perms *= i
            if self.num_classes > perms:
                raise InvalidConfig(f"spectral-cue mode supports at most {perms} classes for "
                                    f"{self.channels} channels", field="num_classes")
        if self.mode == "mixed" and self.channels < 2:
            raise InvalidConfig("mixed mode needs at least 2 channels", field="channels")
        if not 0.0 <= self.clutter_fraction < 1.0:
            raise InvalidConfig("clutter_fraction must lie in [0, 1)", field="clutter_fraction")


def texture(class_id: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Class texture in [0, 1] with random phase and slight period jitter."""
    family = FAMILIES[class_id % len(FAMILIES)]
    level = class_id // len(FAMILIES)
    period = (5.0 / (1 + 0.5 * level)) * rng.uniform(0.9, 1.1)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    k = 2 * np.pi / period
    if family == "hstripes":
        t = 0.5 + 0.5 * np.sin(k * yy + phase[0])
    elif family == "vstripes":
        t = 0.5 + 0.5 * np.sin(k * xx + phase[0])
    elif family == "checker":
        t = 0.5 + 0.5 * np.sin(k * yy + phase[0]) * np.sin(k * xx + phase[1])
    elif family == "diag":
        t = 0.5 + 0.5 * np.sin(k * (xx + yy) / np.sqrt(2) + phase[0])
    elif family == "antidiag":
        t = 0.5 + 0.5 * np.sin(k * (xx - yy) / np.sqrt(2) + phase[0])
    else:
        n_blobs = max(2, int(round(size * size / (period * period * 4))))
        cy = rng.uniform(0, size, n_blobs)
        cx = rng.uniform(0, size, n_blobs)
        r = period / 2.5
        d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
        t = np.clip(np.exp(-d2 / (2 * r * r)).sum(axis=0), 0.0, 1.0)
    return t


def _spatial_levels(channels: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel background and foreground levels for one sample."""
    dark = rng.uniform(0.05, 0.35, channels)
    bright = rng.uniform(0.65, 0.95, channels)
    positive = np.arange(channels) < (channels + 1) // 2
    bg = np.where(positive, dark, bright)
    fg = np.where(positive, bright, dark)
    return bg, fg


def spectral_signature(class_id: int, channels: int) -> np.ndarray:
    """Channel levels ordered by the class's permutation of ``range(C)``."""
    perm = next(itertools.islice(itertools.permutations(range(channels)), class_id, None))
    levels = np.linspace(0.2, 0.8, channels)
    return levels[list(perm)]


def _render_region(spec: SynthSpec, class_id: int, rng: np.random.Generator) -> np.ndarray:
    c, s = spec.channels, spec.size
    if spec.mode == "spectral-cue":
        sig = spectral_signature(class_id, c) + rng.uniform(-0.05, 0.05)
        return np.broadcast_to(sig[:, None, None], (c, s, s)).copy()
    t = texture(class_id, s, rng)
    bg, fg = _spatial_levels(c, rng)
    if spec.mode == "mixed":
        # parity signature: shift channel pairs up or down together
        sign = np.where(np.arange(c) % 2 == class_id % 2, 1.0, -1.0)
        shift = 0.12 * sign
        bg, fg = bg * 0.7 + 0.15 + shift, fg * 0.7 + 0.15 + shift
    return bg[:, None, None] + (fg - bg)[:, None, None] * t[None]


def _voronoi_labels(size: int, rng: np.random.Generator) -> np.ndarray:
    n = int(rng.integers(2, 5))
    cy = rng.uniform(0, size, n)
    cx = rng.uniform(0, size, n)
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
    return d2.argmin(axis=0)


def make_sample(spec: SynthSpec, split: str, index: int):
    """Render one (image, target) pair; fully determined by (seed, split, index)."""
    rng = numpy_rng(spec.seed, _SPLIT_STREAM[split], index)
    c, s = spec.channels, spec.size
    if spec.task == "classification":
        label = int(rng.integers(spec.num_classes))
        img = _render_region(spec, label, rng)
        target = label
    else:
        regions = _voronoi_labels(s, rng)
        mask = np.empty((s, s), np.uint8)
        img = np.empty((c, s, s))
        for r in range(int(regions.max()) + 1):
            sel = regions == r
            if not sel.any():
                continue
            if rng.random() < spec.clutter_fraction:
                mask[sel] = 255
                img[:, sel] = rng.uniform(0.0, 1.0, (c, int(sel.sum())))
                continue
            k = int(rng.integers(spec.num_classes))
            mask[sel] = k
            img[:, sel] = _render_region(spec, k, rng)[:, sel]
        target = mask
    img = img + spec.noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), target


def synth_arrays(spec: SynthSpec, split: str, count: int | None = None):
    """In-memory (N, C, H, W) images and targets for one split."""
    count = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}[split] if count is None else count
    pairs = [make_sample(spec, split, i) for i in range(count)]
    x = np.stack([p[0] for p in pairs]) if pairs else np.zeros((0, spec.channels, spec.size, spec.size), np.float32)
    y = np.asarray([p[1] for p in pairs]) if spec.task == "classification" else (
        np.stack([p[1] for p in pairs]) if pairs else np.zeros((0, spec.size, spec.size), np.uint8))
    return x, y


def synth_generate(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write MBR images (and masks) plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    bands = band_names(spec.channels)
    splits: dict[str, list[Sample]] = {}
    train_images = []
    try:
        for split, count in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
            if count == 0:
                continue
            samples = []
            for i in range(count):
                img, target = make_sample(spec, split, i)
                rel = f"{split}/img_{i:05d}.mbr"
                raster = RasterImage(img, tuple(bands))
                save_raster(raster, out / rel)
                if split == "train":
                    train_images.append(raster)
                if spec.task == "classification":
                    samples.append(Sample(rel, label=int(target)))
                else:
                    mrel = f"{split}/mask_{i:05d}.mbr"
                    save_raster(RasterImage(target[None], ("label",)), out / mrel)
                    samples.append(Sample(rel, mask=mrel))
            splits[split] = samples
        manifest = DatasetManifest(
            name=spec.name or f"synth-{spec.mode}-{spec.task}",
            classes=[f"{FAMILIES[k % len(FAMILIES)]}{k // len(FAMILIES) or ''}" if spec.mode != "spectral-cue"
                     else f"signature{k}" for k in range(spec.num_classes)],
            bands=bands,
            splits=splits,
            task=spec.task,
            norm_stats=stats_from_images(train_images) if train_images else None,
            root=out,
        )
        manifest.save(out / "manifest.json")
    except OSError as exc:
        raise IOFailure(f"cannot write synthetic dataset to {out}: {exc}", field="out") from exc
    return manifest
