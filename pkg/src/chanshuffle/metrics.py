"""Segmentation/classification metrics, tiled inference and channel-order sensitivity."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .data.normalize import NormStats, normalize
from .data.tiling import stitch, tile
from .errors import ClassOutOfRange, ShapeMismatch
from .raster import RasterImage, atomic_write_bytes


class ConfusionMatrix:
    """K x K counts indexed ``[ground truth][prediction]`` plus an ignored tally."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None, ignored: int = 0):
        if num_classes < 1:
            raise ShapeMismatch("num_classes must be >= 1", field="num_classes")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), np.int64) if counts is None else np.array(counts, np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ShapeMismatch(f"counts shape {self.counts.shape} != {(num_classes, num_classes)}", field="counts")
        self.ignored = int(ignored)

    def update(self, pred, gt, ignore_index: int = 255) -> ConfusionMatrix:
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeMismatch(f"prediction shape {pred.shape} != ground truth {gt.shape}", field="pred")
        k = self.num_classes
        keep = gt != ignore_index
        g = gt[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        if p.size and (p.min() < 0 or p.max() >= k):
            raise ClassOutOfRange(f"prediction outside [0, {k})", field="pred")
        if g.size and (g.min() < 0 or g.max() >= k):
            raise ClassOutOfRange(f"ground truth outside [0, {k}) and not {ignore_index}", field="gt")
        self.counts += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
        self.ignored += int(gt.size - keep.sum())
        return self

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.num_classes != self.num_classes:
            raise ShapeMismatch(f"cannot merge K={self.num_classes} with K={other.num_classes}", field="num_classes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts, self.ignored + other.ignored)

    def copy(self) -> ConfusionMatrix:
        return ConfusionMatrix(self.num_classes, self.counts.copy(), self.ignored)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionMatrix) and self.num_classes == other.num_classes
                and np.array_equal(self.counts, other.counts) and self.ignored == other.ignored)

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts)

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    def __repr__(self) -> str:
        return f"ConfusionMatrix(K={self.num_classes}, total={int(self.counts.sum())}, ignored={self.ignored})"


def cm_update(cm: ConfusionMatrix, pred, gt, ignore_index: int = 255) -> ConfusionMatrix:
    return cm.update(pred, gt, ignore_index)


def cm_merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    return a.merge(b)


def _scores(num, den, exact: bool):
    per_class = []
    for n, d in zip(num.tolist(), den.tolist()):
        if d == 0:
            per_class.append(None)
        else:
            per_class.append(Fraction(n, d) if exact else n / d)
    defined = [v for v in per_class if v is not None]
    if not defined:
        return per_class, None
    mean = sum(defined, Fraction(0)) / len(defined) if exact else float(np.mean(defined))
    return per_class, mean


def iou_scores(cm: ConfusionMatrix, exact: bool = False):
    """Per-class IoU (None where TP+FP+FN == 0) and their mean over defined classes."""
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    return _scores(tp, tp + fp + fn, exact)


def f1_scores(cm: ConfusionMatrix, exact: bool = False):
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    return _scores(2 * tp, 2 * tp + fp + fn, exact)


def topk_predictions(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores per row; ties favour the lower class index."""
    return np.argsort(-np.asarray(logits), axis=1, kind="stable")[:, :k]


def topk_accuracy(logits, labels, k: int = 1) -> float:
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} and labels {labels.shape} do not match", field="labels")
    if not 1 <= k <= logits.shape[1]:
        raise ShapeMismatch(f"k={k} outside [1, {logits.shape[1]}]", field="k")
    if len(labels) == 0:
        return float("nan")
    top = topk_predictions(logits, k)
    return float((top == labels[:, None]).any(axis=1).mean())


@dataclass
class MetricsReport:
    iou: list
    f1: list
    miou: float | None
    mf1: float | None
    samples: int
    class_names: list[str] = field(default_factory=list)
    labels: dict = field(default_factory=dict)
    top1: float | None = None
    top5: float | None = None

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, samples: int, class_names=None, **labels) -> MetricsReport:
        iou, miou = iou_scores(cm)
        f1, mf1 = f1_scores(cm)
        return cls(iou, f1, miou, mf1, samples, list(class_names or []), labels)

    def to_json(self) -> dict:
        return {
            "iou": self.iou, "f1": self.f1, "miou": self.miou, "mf1": self.mf1,
            "top1": self.top1, "top5": self.top5, "samples": self.samples,
            "classes": self.class_names, "labels": self.labels,
        }

    def to_text(self) -> str:
        names = self.class_names or [str(i) for i in range(len(self.iou))]
        width = max(10, *(len(n) for n in names))
        lines = [f"{'class':<{width}}  {'IoU':>7}  {'F1':>7}"]
        for name, i, f in zip(names, self.iou, self.f1):
            lines.append(f"{name:<{width}}  {_pct(i):>7}  {_pct(f):>7}")
        lines.append(f"{'mean':<{width}}  {_pct(self.miou):>7}  {_pct(self.mf1):>7}")
        return "\n".join(lines)


def _pct(v) -> str:
    return "-" if v is None else f"{100 * float(v):.2f}"


# -- inference ---------------------------------------------------------------

def tile_scores(net, tiles: Sequence[np.ndarray], batch_size: int = 16) -> list[np.ndarray]:
    """Raw per-class logits for each (C, P, P) tile, as (K, P, P) float64 arrays."""
    frozen = {k: Tensor(v.data, dtype=v.dtype) for k, v in net.params.items()}
    out: list[np.ndarray] = []
    for i in range(0, len(tiles), batch_size):
        batch = np.stack([np.asarray(t, dtype=net.dtype) for t in tiles[i:i + batch_size]])
        z = net.forward(batch, frozen).data
        out.extend(z.astype(np.float64))
    return out


def sliding_inference(net, scene, patch: int, stride: int | None = None, stats: NormStats | None = None,
                      *, return_scores: bool = False, batch_size: int = 16):
    """Single-scale tiled prediction of an (H, W) label map for one scene."""
    data = scene.data if isinstance(scene, RasterImage) else np.asarray(scene)
    if data.shape[0] != net.spec.input_channels:
        raise ShapeMismatch(f"scene has {data.shape[0]} channels, network expects {net.spec.input_channels}",
                            field="input_channels")
    if stats is not None:
        data = normalize(data, stats)
    tiles, grid = tile(data.astype(np.float32), patch, stride)
    scores = stitch(tile_scores(net, tiles, batch_size), grid)
    labels = scores.argmax(axis=0).astype(np.uint8)
    return (labels, scores) if return_scores else labels


def evaluate_segmentation(net, images, masks, *, patch: int, stride: int | None = None,
                          stats: NormStats | None = None, ignore_index: int = 255,
                          class_names=None, **labels) -> MetricsReport:
    cm = ConfusionMatrix(net.spec.num_classes)
    for img, mask in zip(images, masks):
        cm.update(sliding_inference(net, img, patch, stride, stats), mask, ignore_index)
    return MetricsReport.from_confusion(cm, len(images), class_names, **labels)


def classify(net, images, stats: NormStats | None = None, batch_size: int = 128,
             channels: Sequence[int] | None = None) -> np.ndarray:
    """Logits for an (N, C, H, W) stack.

    The stack is normalized first when ``stats`` is given; ``channels`` then
    maps source bands to model inputs (e.g. the fixed duplication used to
    feed an m-band image to an n-input model).
    """
    x = np.asarray(images)
    if stats is not None:
        x = normalize(x, stats)
    if channels is not None:
        x = x[:, list(channels)]
    frozen = {k: Tensor(v.data, dtype=v.dtype) for k, v in net.params.items()}
    outs = [net.forward(x[i:i + batch_size].astype(net.dtype), frozen).data for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, net.spec.num_classes))


def per_class_accuracy(logits: np.ndarray, labels: np.ndarray, num_classes: int) -> list:
    pred = topk_predictions(logits, 1)[:, 0]
    out = []
    for c in range(num_classes):
        sel = labels == c
        out.append(float((pred[sel] == c).mean()) if sel.any() else None)
    return out


def permutation_name(perm: Sequence[int], bands: Sequence[str] | None = None) -> str:
    perm = list(perm)
    if perm == list(range(len(perm))):
        return "identity"
    if perm == list(range(len(perm) - 1, -1, -1)):
        return "reversed"
    if bands is not None:
        return "".join(bands[p][0] for p in perm) if all(len(b) == 1 for b in bands) else ",".join(bands[p] for p in perm)
    return "perm(" + ",".join(map(str, perm)) + ")"


def permutation_sensitivity(net, images, labels, permutations: Sequence[Sequence[int]] | None = None,
                            stats: NormStats | None = None, *, bands: Sequence[str] | None = None,
                            class_names: Sequence[str] | None = None, model_label: str = "",
                            channels: Sequence[int] | None = None) -> dict:
    """Top-1/Top-5 and per-class accuracy under each channel permutation.

    Permutations act on raw inputs; normalization (with the model's
    statistics, in natural band order) happens afterwards, as if a sensor
    delivered its bands in a different order.  Deltas are relative to the
    identity ordering, which is always evaluated.  ``channels`` is passed
    through to :func:`classify`.
    """
    x = np.asarray(images)
    y = np.asarray(labels)
    c = x.shape[1]
    k_classes = net.spec.num_classes
    identity = list(range(c))
    if permutations is None:
        permutations = [identity, identity[::-1]]
    permutations = [list(map(int, p)) for p in permutations]
    for p in permutations:
        if sorted(p) != identity:
            raise ShapeMismatch(f"{p} is not a permutation of {c} channels", field="permutations")
    k5 = min(5, k_classes)

    def evaluate(perm):
        logits = classify(net, x[:, perm], stats, channels=channels)
        return {
            "top1": topk_accuracy(logits, y, 1),
            "top5": topk_accuracy(logits, y, k5),
            "per_class": per_class_accuracy(logits, y, k_classes),
        }

    base = evaluate(identity)
    rows = []
    for perm in permutations:
        res = base if perm == identity else evaluate(perm)
        rows.append({
            "name": permutation_name(perm, bands),
            "permutation": perm,
            **res,
            "delta_top1": res["top1"] - base["top1"],
            "delta_top5": res["top5"] - base["top5"],
            "delta_per_class": [None if a is None or b is None else a - b
                                for a, b in zip(res["per_class"], base["per_class"])],
        })
    return {
        "model": model_label,
        "samples": int(len(y)),
        "top5_k": k5,
        "classes": list(class_names or [str(i) for i in range(k_classes)]),
        "permutations": rows,
    }


def format_sensitivity_table(reports: Sequence[dict]) -> str:
    """Aligned table: one row per model, Top-1/Top-5 per permutation, then Top-1 delta."""
    if not reports:
        return ""
    perm_names = []
    for r in reports:
        for row in r["permutations"]:
            if row["name"] not in perm_names:
                perm_names.append(row["name"])
    model_w = max(8, *(len(r.get("model", "")) for r in reports))
    head1 = f"{'Pretrain':<{model_w}}" + "".join(f"  {n + ' input':^17}" for n in perm_names) + "  ΔTop-1"
    head2 = f"{'':<{model_w}}" + "".join(f"  {'Top-1':>8} {'Top-5':>8}" for _ in perm_names)
    lines = [head1, head2]
    for r in reports:
        by_name = {row["name"]: row for row in r["permutations"]}
        cells = ""
        for n in perm_names:
            row = by_name.get(n)
            cells += f"  {'-':>8} {'-':>8}" if row is None else f"  {_pct(row['top1']):>8} {_pct(row['top5']):>8}"
        worst = max((abs(row["delta_top1"]) for row in r["permutations"]), default=0.0)
        lines.append(f"{r.get('model', ''):<{model_w}}{cells}  {100 * worst:6.2f}")
    return "\n".join(lines)


def format_per_class_table(report: dict) -> str:
    """Per-class accuracy under each permutation (one column per permutation)."""
    names = [row["name"] for row in report["permutations"]]
    cls_w = max(8, *(len(c) for c in report["classes"]))
    lines = [f"{'Class':<{cls_w}}" + "".join(f"  {n:>10}" for n in names)]
    for ci, cname in enumerate(report["classes"]):
        cells = "".join(f"  {_pct(row['per_class'][ci]):>10}" for row in report["permutations"])
        lines.append(f"{cname:<{cls_w}}{cells}")
    return "\n".join(lines)


def dump_json(obj, path) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, default=_json_default) + "\n").encode("utf-8"))


def _json_default(o):
    if isinstance(o, Fraction):
        return float(o)
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")
