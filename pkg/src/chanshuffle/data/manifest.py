"""Dataset manifests: a JSON file naming classes, bands and split samples.

Example::

    {
      "name": "potsdam-mbr",
      "classes": ["surface", "building", "low_veg", "tree", "car"],
      "ignore_index": 255,
      "bands": ["R", "G", "B", "IR", "DSM"],
      "task": "segmentation",
      "splits": {"train": [{"image": "img/0001.mbr", "mask": "mask/0001.mbr"}],
                 "val": [...], "test": [...]},
      "norm_stats": {"mean": [...], "std": [...]}
    }

Classification samples carry ``"label": <int>`` instead of ``"mask"``.
Paths are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ClassOutOfRange, DataError, EmptyDataset, IOFailure, ShapeMismatch
from ..raster import RasterImage, atomic_write_bytes, load_raster
from .normalize import NormStats, stats_from_images

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Sample:
    image: str
    mask: str | None = None
    label: int | None = None

    def to_json(self) -> dict:
        out: dict = {"image": self.image}
        if self.mask is not None:
            out["mask"] = self.mask
        if self.label is not None:
            out["label"] = self.label
        return out


@dataclass
class DatasetManifest:
    name: str
    classes: list[str]
    bands: list[str]
    splits: dict[str, list[Sample]]
    ignore_index: int = 255
    task: str = "segmentation"
    norm_stats: NormStats | None = None
    root: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def channels(self) -> int:
        return len(self.bands)

    def samples(self, split: str) -> list[Sample]:
        return self.splits.get(split, [])

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "classes": list(self.classes),
            "ignore_index": self.ignore_index,
            "bands": list(self.bands),
            "task": self.task,
            "splits": {k: [s.to_json() for s in v] for k, v in self.splits.items()},
        }
        if self.norm_stats is not None:
            out["norm_stats"] = self.norm_stats.to_json()
        return out

    def save(self, path) -> None:
        path = Path(path)
        atomic_write_bytes(path, (json.dumps(self.to_json(), indent=2) + "\n").encode("utf-8"))
        self.root = path.parent

    # loading ----------------------------------------------------------------

    def load_image(self, sample: Sample) -> RasterImage:
        img = load_raster(self.resolve(sample.image))
        if list(img.bands) != list(self.bands):
            raise ShapeMismatch(f"{sample.image}: bands {list(img.bands)} disagree with manifest {self.bands}",
                                field="bands")
        return img

    def load_mask(self, sample: Sample) -> np.ndarray:
        if sample.mask is None:
            raise DataError(f"{sample.image}: no mask in a segmentation sample", field="mask")
        m = load_raster(self.resolve(sample.mask)).data
        if m.shape[0] != 1:
            raise DataError(f"{sample.mask}: mask must be single-band", field="mask")
        m = m[0]
        bad = (m >= self.num_classes) & (m != self.ignore_index)
        if bad.any():
            raise ClassOutOfRange(f"{sample.mask}: class id {int(m[bad][0])} out of range", field="mask")
        return m

    def load_split(self, split: str):
        """(images, targets) for a split: targets are masks or integer labels."""
        images, targets = [], []
        for s in self.samples(split):
            img = self.load_image(s)
            images.append(img)
            if self.task == "classification":
                if s.label is None or not 0 <= s.label < self.num_classes:
                    raise ClassOutOfRange(f"{s.image}: missing or out-of-range label", field="label")
                targets.append(int(s.label))
            else:
                m = self.load_mask(s)
                if m.shape != img.data.shape[1:]:
                    raise ShapeMismatch(f"{s.mask}: mask size {m.shape} != image size", field="mask")
                targets.append(m)
        return images, targets


def load_manifest(path, *, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IOFailure(f"cannot read manifest {path}: {exc}", field="manifest") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}", field="manifest") from exc
    try:
        splits = {
            k: [Sample(s["image"], s.get("mask"), s.get("label")) for s in v]
            for k, v in obj.get("splits", {}).items()
        }
        unknown = set(splits) - set(SPLITS)
        if unknown:
            raise DataError(f"unknown split(s) {sorted(unknown)}", field="splits")
        m = DatasetManifest(
            name=obj["name"],
            classes=list(obj["classes"]),
            bands=list(obj["bands"]),
            splits=splits,
            ignore_index=int(obj.get("ignore_index", 255)),
            task=obj.get("task", "segmentation"),
            norm_stats=NormStats.from_json(obj["norm_stats"]) if obj.get("norm_stats") else None,
            root=path.parent,
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"manifest {path} missing or malformed field: {exc}", field="manifest") from exc
    if m.task not in ("segmentation", "classification"):
        raise DataError(f"unknown task {m.task!r}", field="task")
    if check_files:
        for split, samples in m.splits.items():
            for s in samples:
                for rel in (s.image, s.mask):
                    if rel is not None and not m.resolve(rel).exists():
                        raise IOFailure(f"{split} sample file missing: {rel}", field=rel)
    return m


def compute_norm_stats(manifest: DatasetManifest, split: str = "train") -> NormStats:
    samples = manifest.samples(split)
    if not samples:
        raise EmptyDataset(f"split {split!r} has no samples", field=split)
    return stats_from_images(manifest.load_image(s) for s in samples)
