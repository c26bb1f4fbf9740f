"""Pre-training (epoch-driven classification) and fine-tuning (iteration-driven segmentation)."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import Tensor, backward, softmax_cross_entropy_masked
from ..csp import Baseline, ChannelPlan, Csp, CspConfig, PretrainStrategy, draw_channel_plan, parse_band_list
from ..data.augment import DEFAULT_SCALES, AugmentConfig, augment_sample
from ..data.manifest import DatasetManifest, compute_norm_stats
from ..data.normalize import NormStats, normalize
from ..errors import EmptyBatch, EmptyDataset, InvalidConfig, NonFiniteLoss, UnknownBand, WidthMismatch
from ..metrics import classify, evaluate_segmentation, topk_accuracy
from ..models import Checkpoint, Network, NetworkSpec, build_network, save_checkpoint, transfer_encoder
from ..rng import numpy_rng
from .optim import AdamWConfig, OptimState, adamw_step
from .schedule import ScheduleConfig, lr_at

log = logging.getLogger(__name__)

_ORDER_STREAM = 0x0D
_BATCH_STREAM = 0xB7


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 300
    iterations: int = 10_000
    seed: int = 0
    patch_size: int = 224
    checkpoint_every: int = 0
    log_every: int = 1
    val_every: int = 0
    augment: bool = True
    scales: tuple[float, ...] = DEFAULT_SCALES
    flip_prob: float = 0.5
    bands: tuple[str, ...] | None = None
    val_stride: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be positive", field="batch_size")
        if self.epochs < 0 or self.iterations < 0:
            raise InvalidConfig("epochs and iterations must be non-negative", field="epochs")
        if self.patch_size < 4 or self.patch_size % 4:
            raise InvalidConfig("patch_size must be a positive multiple of 4", field="patch_size")
        if self.log_every < 1:
            raise InvalidConfig("log_every must be positive", field="log_every")

    def augment_config(self) -> AugmentConfig:
        if self.augment:
            return AugmentConfig(self.patch_size, tuple(self.scales), self.flip_prob, seed=self.seed)
        return AugmentConfig(self.patch_size, (1.0,), 0.0, seed=self.seed)


class JsonlLog:
    """Structured training log: one JSON object per line."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, **record) -> None:
        self.records.append(record)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.debug("%s", record)


@dataclass
class History:
    steps: int = 0
    losses: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    val_top1: list[float] = field(default_factory=list)
    val_miou: list[tuple[int, float | None]] = field(default_factory=list)


def _check_loss(loss: Tensor, step: int) -> float:
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss became {value} at step {step}", field="loss")
    return value


def _sgd_step(net: Network, loss: Tensor, state: OptimState, lr: float, adamw: AdamWConfig) -> None:
    net.zero_grad()
    backward(loss)
    adamw_step(net.params, {k: p.grad for k, p in net.params.items()}, state, lr, adamw)


def eval_plan(strategy: PretrainStrategy, m: int) -> ChannelPlan | None:
    """Fixed channel mapping for validation: natural order, duplicated for n > m."""
    if isinstance(strategy, Csp):
        cfg = strategy.config
        return ChannelPlan(tuple((list(range(m)) * cfg.x)[:cfg.n]))
    return None


def train_classifier(net: Network, x: np.ndarray, y: np.ndarray, strategy: PretrainStrategy,
                     train_cfg: TrainConfig, sched: ScheduleConfig, adamw: AdamWConfig, *,
                     val: tuple[np.ndarray, np.ndarray] | None = None, logger: JsonlLog | None = None,
                     on_batch: Callable | None = None, on_epoch: Callable | None = None) -> History:
    """Train ``net`` in place on already-normalized (N, C, H, W) images ``x``.

    Each epoch visits samples in a seeded order; a sample's channel plan and
    augmentation depend only on ``(seed, epoch, sample_index)``.
    """
    n = len(x)
    if n == 0:
        raise EmptyDataset("no training samples", field="train")
    m = x.shape[1]
    want = net.spec.input_channels
    if isinstance(strategy, Csp):
        if strategy.config.m != m:
            raise InvalidConfig(f"CSP m={strategy.config.m} but data has {m} channels", field="csp.m")
        if strategy.config.n != want:
            raise InvalidConfig(f"CSP n={strategy.config.n} but model takes {want} channels", field="csp.n")
    elif m != want:
        raise InvalidConfig(f"baseline needs data channels ({m}) == model channels ({want})", field="input_channels")

    logger = logger or JsonlLog()
    aug = train_cfg.augment_config()
    bs = train_cfg.batch_size
    steps_per_epoch = -(-n // bs)
    sched = sched.in_iterations(steps_per_epoch)
    total = train_cfg.epochs * steps_per_epoch
    if total > sched.total:
        raise InvalidConfig(f"schedule covers {sched.total} steps, training needs {total}", field="schedule")
    state = OptimState()
    hist = History()
    val_plan = eval_plan(strategy, m)
    for epoch in range(train_cfg.epochs):
        order = numpy_rng(train_cfg.seed, _ORDER_STREAM, epoch).permutation(n)
        epoch_losses = []
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            batch, plans = [], []
            for i in idx:
                img = x[i]
                if isinstance(strategy, Csp):
                    plan = draw_channel_plan(strategy.config, (epoch, int(i)))
                    plans.append(plan)
                    img = img[list(plan.sources)]
                img, _ = augment_sample(img, None, aug, (epoch, int(i)))
                batch.append(img)
            if on_batch is not None:
                on_batch(epoch, idx, plans)
            lr = lr_at(hist.steps, sched)
            logits = net.forward(np.stack(batch).astype(net.dtype))
            loss = softmax_cross_entropy_masked(logits, y[idx])
            value = _check_loss(loss, hist.steps)
            _sgd_step(net, loss, state, lr, adamw)
            hist.steps += 1
            hist.losses.append(value)
            epoch_losses.append(value)
            if hist.steps % train_cfg.log_every == 0:
                logger.write(step=hist.steps, epoch=epoch, lr=lr, loss=value)
        hist.epoch_loss.append(float(np.mean(epoch_losses)))
        record = {"epoch": epoch, "step": hist.steps, "lr": lr_at(hist.steps, sched), "loss": hist.epoch_loss[-1]}
        if val is not None and len(val[0]):
            vx = val[0] if val_plan is None else val[0][:, list(val_plan.sources)]
            top1 = topk_accuracy(classify(net, vx), val[1], 1)
            hist.val_top1.append(top1)
            record["val_top1"] = top1
        logger.write(**record)
        if on_epoch is not None:
            on_epoch(epoch, net)
    return hist


def _strategy_from(strategy, m: int, n: int, seed: int) -> PretrainStrategy:
    if isinstance(strategy, (Baseline, Csp)):
        return strategy
    if strategy in (None, "baseline", "Baseline"):
        return Baseline()
    if str(strategy).lower().startswith("csp"):
        return Csp(CspConfig(m, n, seed))
    raise InvalidConfig(f"unknown strategy {strategy!r}", field="strategy")


def pretrain(manifest: DatasetManifest, strategy: PretrainStrategy, net_cfg: NetworkSpec, train_cfg: TrainConfig,
             sched: ScheduleConfig, adamw: AdamWConfig, *, log_path=None, checkpoint_path=None,
             on_batch: Callable | None = None) -> Checkpoint:
    """Classification pre-training on a manifest; returns a checkpoint tagged with the strategy."""
    if manifest.task != "classification":
        raise InvalidConfig("pre-training needs a classification manifest", field="manifest")
    if net_cfg.head != "classification":
        raise InvalidConfig("pre-training builds a classifier", field="head")
    if net_cfg.num_classes != manifest.num_classes:
        raise InvalidConfig(f"network has {net_cfg.num_classes} classes, data has {manifest.num_classes}",
                            field="num_classes")
    strategy = _strategy_from(strategy, manifest.channels, net_cfg.input_channels, train_cfg.seed)
    if isinstance(strategy, Baseline) and manifest.channels != net_cfg.input_channels:
        raise InvalidConfig(f"baseline strategy needs data channels ({manifest.channels}) == model input "
                            f"channels ({net_cfg.input_channels})", field="input_channels")
    if isinstance(strategy, Csp) and strategy.config.m != manifest.channels:
        raise InvalidConfig(f"CSP m={strategy.config.m} but data has {manifest.channels} channels", field="csp.m")
    if not manifest.samples("train"):
        raise EmptyDataset("training split is empty", field="train")

    stats = manifest.norm_stats or compute_norm_stats(manifest, "train")
    images, labels = manifest.load_split("train")
    x = normalize(np.stack([im.data for im in images]), stats)
    y = np.asarray(labels)
    val = None
    if manifest.samples("val"):
        vi, vl = manifest.load_split("val")
        val = (normalize(np.stack([im.data for im in vi]), stats), np.asarray(vl))

    net = build_network(net_cfg, seed=train_cfg.seed)
    logger = JsonlLog(log_path)
    meta = {
        "seed": train_cfg.seed, "epochs": train_cfg.epochs, "batch_size": train_cfg.batch_size,
        "norm_stats": stats.to_json(), "bands": list(manifest.bands), "classes": list(manifest.classes),
        "dataset": manifest.name,
    }

    def on_epoch(epoch, net):
        every = train_cfg.checkpoint_every
        if checkpoint_path and every and (epoch + 1) % every == 0 and epoch + 1 < train_cfg.epochs:
            save_checkpoint(net, checkpoint_path, {**meta, "completed_epochs": epoch + 1}, strategy.tag)

    hist = train_classifier(net, x, y, strategy, train_cfg, sched, adamw, val=val, logger=logger,
                            on_batch=on_batch, on_epoch=on_epoch)
    meta["steps"] = hist.steps
    meta["completed_epochs"] = train_cfg.epochs
    if hist.val_top1:
        meta["val_top1"] = hist.val_top1[-1]
    ckpt = Checkpoint.from_network(net, strategy.tag, meta)
    if checkpoint_path:
        save_checkpoint(ckpt, checkpoint_path)
    return ckpt


def _band_view(manifest: DatasetManifest, bands) -> list[int]:
    names = parse_band_list(bands) if bands else list(manifest.bands)
    for b in names:
        if b not in manifest.bands:
            raise UnknownBand(f"unknown band {b!r}; manifest has {', '.join(manifest.bands)}", field=b)
    return [manifest.bands.index(b) for b in names]


def select_stats(stats: NormStats, idx: list[int]) -> NormStats:
    return NormStats(tuple(stats.mean[i] for i in idx), tuple(stats.std[i] for i in idx))


def train_segmenter(net: Network, images: list[np.ndarray], masks: list[np.ndarray], train_cfg: TrainConfig,
                    sched: ScheduleConfig, adamw: AdamWConfig, *, ignore_index: int = 255,
                    validate: Callable[[Network], float | None] | None = None,
                    logger: JsonlLog | None = None) -> History:
    """Iteration-driven segmentation training on normalized (C, H, W) images."""
    n = len(images)
    if n == 0:
        raise EmptyDataset("no training samples", field="train")
    logger = logger or JsonlLog()
    aug = train_cfg.augment_config()
    state = OptimState()
    hist = History()
    bs = min(train_cfg.batch_size, n)
    for it in range(train_cfg.iterations):
        idx = numpy_rng(train_cfg.seed, _BATCH_STREAM, it).choice(n, size=bs, replace=False)
        xb, yb = [], []
        for i in idx:
            img, msk = augment_sample(images[i], masks[i], aug, (it, int(i)))
            xb.append(img)
            yb.append(msk)
        lr = lr_at(it, sched)
        logits = net.forward(np.stack(xb).astype(net.dtype))
        try:
            loss = softmax_cross_entropy_masked(logits, np.stack(yb), ignore_index)
        except EmptyBatch:
            log.warning("iteration %d: every pixel ignored, batch skipped", it)
            continue
        value = _check_loss(loss, it)
        _sgd_step(net, loss, state, lr, adamw)
        hist.steps += 1
        hist.losses.append(value)
        record = None
        if (it + 1) % train_cfg.log_every == 0:
            record = {"step": it + 1, "lr": lr, "loss": value}
        if validate is not None and train_cfg.val_every and (it + 1) % train_cfg.val_every == 0:
            miou = validate(net)
            hist.val_miou.append((it + 1, miou))
            record = {**(record or {"step": it + 1, "lr": lr, "loss": value}), "val_miou": miou}
        if record:
            logger.write(**record)
    return hist


def finetune(manifest: DatasetManifest, ckpt: Checkpoint | None, net_cfg: NetworkSpec | None,
             train_cfg: TrainConfig, sched: ScheduleConfig, adamw: AdamWConfig, *, log_path=None,
             checkpoint_path=None, val_split: str = "val") -> Checkpoint:
    """Segmentation fine-tuning from a pre-trained checkpoint (or from scratch when ``ckpt`` is None).

    Bands are presented in the manifest's order (optionally a ``bands``
    subset); channel shuffling is never applied here.
    """
    if manifest.task != "segmentation":
        raise InvalidConfig("fine-tuning needs a segmentation manifest", field="manifest")
    idx = _band_view(manifest, train_cfg.bands)
    n_in = len(idx)
    width = ckpt.width if ckpt is not None else (net_cfg.width if net_cfg else 32)
    if net_cfg is not None and ckpt is not None and net_cfg.width != ckpt.width:
        raise WidthMismatch(f"network width {net_cfg.width} != checkpoint width {ckpt.width}", field="width")
    if net_cfg is not None and net_cfg.input_channels != n_in:
        raise InvalidConfig(f"network takes {net_cfg.input_channels} channels but {n_in} bands selected",
                            field="input_channels")
    spec = NetworkSpec(n_in, manifest.num_classes, width, "segmentation")
    if not manifest.samples("train"):
        raise EmptyDataset("training split is empty", field="train")

    stats_all = manifest.norm_stats or compute_norm_stats(manifest, "train")
    stats = select_stats(stats_all, idx)
    images, masks = manifest.load_split("train")
    x = [normalize(im.data[idx], stats) for im in images]
    net = build_network(spec, seed=train_cfg.seed)
    if ckpt is not None:
        net = transfer_encoder(ckpt, net)

    val_images, val_masks = ([], [])
    if manifest.samples(val_split):
        vi, val_masks = manifest.load_split(val_split)
        val_images = [im.data[idx] for im in vi]

    def validate(model):
        if not val_images:
            return None
        return evaluate_segmentation(model, val_images, val_masks, patch=train_cfg.patch_size,
                                     stride=train_cfg.val_stride, stats=stats,
                                     ignore_index=manifest.ignore_index).miou

    logger = JsonlLog(log_path)
    hist = train_segmenter(net, x, masks, train_cfg, sched, adamw, ignore_index=manifest.ignore_index,
                           validate=validate, logger=logger)
    final = validate(net)
    logger.write(step=hist.steps, val_miou=final, final=True)
    meta = {
        "seed": train_cfg.seed, "iterations": train_cfg.iterations, "steps": hist.steps,
        "source_strategy": ckpt.strategy if ckpt is not None else "scratch",
        "bands": [manifest.bands[i] for i in idx], "norm_stats": stats.to_json(),
        "classes": list(manifest.classes), "ignore_index": manifest.ignore_index,
        "patch_size": train_cfg.patch_size, "val_miou": final, "dataset": manifest.name,
    }
    tag = f"{ckpt.strategy}+finetune" if ckpt is not None else "scratch"
    out = Checkpoint.from_network(net, tag, meta)
    if checkpoint_path:
        save_checkpoint(out, checkpoint_path)
    return out
