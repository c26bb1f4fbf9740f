"""Command-line front end: ``chanshuffle <subcommand> [options]``.

Every training option can also come from a JSON file given with
``--config``; flags on the command line win over the file, and the file
wins over the built-in defaults (the published pre-training and
fine-tuning recipes).  A config file may hold flat keys or one section per
subcommand, e.g. ``{"pretrain": {"epochs": 20}, "seed": 3}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Failures print one line to stderr::

    error code=2 kind=InvalidConfig field=csp.n message="..."

Set ``CHANSHUFFLE_LOG`` to DEBUG, INFO, WARNING (default) or ERROR to
control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .csp import Baseline, Csp, CspConfig, apply_plan, draw_channel_plan
from .data.augment import DEFAULT_SCALES
from .data.manifest import compute_norm_stats, load_manifest
from .data.normalize import NormStats
from .data.synth import MODES, TASKS, SynthSpec, band_names, make_sample, synth_generate
from .errors import (
    ChanShuffleError,
    ConfigError,
    DataError,
    InvalidConfig,
    IOFailure,
    NumericError,
    UnknownBand,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    classify,
    dump_json,
    format_per_class_table,
    format_sensitivity_table,
    per_class_accuracy,
    permutation_sensitivity,
    sliding_inference,
    topk_accuracy,
)
from .models import Checkpoint, NetworkSpec, load_checkpoint
from .raster import RasterImage, atomic_write_bytes, load_raster, save_label_png, save_png
from .train.loops import TrainConfig, eval_plan, finetune, pretrain, select_stats
from .train.optim import AdamWConfig
from .train.schedule import ScheduleConfig

log = logging.getLogger("chanshuffle")

LOG_ENV = "CHANSHUFFLE_LOG"

PRETRAIN_DEFAULTS = {
    "strategy": "csp", "n": None, "width": 32, "epochs": 300, "batch_size": 128, "lr": 0.000125,
    "warmup": 20, "start_factor": 1e-3, "weight_decay": 0.05, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
    "patch_size": 224, "augment": True, "scales": list(DEFAULT_SCALES), "flip_prob": 0.5, "seed": 0,
    "redraw": "sample", "checkpoint_every": 0, "log_every": 1,
}
FINETUNE_DEFAULTS = {
    "width": 32, "iterations": 10_000, "batch_size": 16, "lr": 1e-4, "warmup": 1500, "start_factor": 1e-6,
    "power": 1.0, "weight_decay": 0.05, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "patch_size": 512,
    "stride": None, "augment": True, "scales": list(DEFAULT_SCALES), "flip_prob": 0.5, "seed": 0,
    "bands": None, "val_every": 0, "log_every": 10,
}
DEFAULTS = {"pretrain": PRETRAIN_DEFAULTS, "finetune": FINETUNE_DEFAULTS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidConfig(message, field="argv")


# -- configuration -----------------------------------------------------------

def _read_config(path, command: str) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}", field="config") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path} is not valid JSON: {exc}", field="config") from exc
    if not isinstance(obj, dict):
        raise InvalidConfig("config must be a JSON object", field="config")
    flat = {k: v for k, v in obj.items() if not isinstance(v, dict) or k not in DEFAULTS}
    section = obj.get(command, {})
    if not isinstance(section, dict):
        raise InvalidConfig(f"config section {command!r} must be an object", field=command)
    return {**flat, **section}


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit command-line flags."""
    defaults = DEFAULTS[command]
    file_opts = _read_config(args.config, command)
    unknown = sorted(set(file_opts) - set(defaults))
    if unknown:
        raise InvalidConfig(f"unknown config key {unknown[0]!r} for {command}", field=unknown[0])
    opts = {**defaults, **file_opts}
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    schedule: ScheduleConfig
    adamw: AdamWConfig
    options: dict

    @classmethod
    def for_pretrain(cls, opts: dict) -> RunConfig:
        train = TrainConfig(batch_size=opts["batch_size"], epochs=opts["epochs"], seed=opts["seed"],
                            patch_size=opts["patch_size"], checkpoint_every=opts["checkpoint_every"],
                            log_every=opts["log_every"], augment=bool(opts["augment"]),
                            scales=tuple(opts["scales"]), flip_prob=opts["flip_prob"])
        sched = ScheduleConfig(opts["lr"], opts["warmup"], opts["epochs"], opts["start_factor"], "cosine",
                               unit="epoch")
        return cls(train, sched, _adamw(opts), opts)

    @classmethod
    def for_finetune(cls, opts: dict) -> RunConfig:
        bands = tuple(_split(opts["bands"])) if opts["bands"] else None
        train = TrainConfig(batch_size=opts["batch_size"], iterations=opts["iterations"], seed=opts["seed"],
                            patch_size=opts["patch_size"], log_every=opts["log_every"], val_every=opts["val_every"],
                            augment=bool(opts["augment"]), scales=tuple(opts["scales"]),
                            flip_prob=opts["flip_prob"], bands=bands, val_stride=opts["stride"])
        sched = ScheduleConfig(opts["lr"], opts["warmup"], max(opts["iterations"], opts["warmup"] + 1),
                               opts["start_factor"], "poly", opts["power"])
        return cls(train, sched, _adamw(opts), opts)


def _adamw(opts: dict) -> AdamWConfig:
    return AdamWConfig(opts["beta1"], opts["beta2"], opts["eps"], opts["weight_decay"])


def _split(value) -> list[str]:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InvalidConfig(f"expected comma-separated numbers, got {text!r}", field="scales") from exc


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, (text.rstrip("\n") + "\n").encode("utf-8"))


def _stats_for(ckpt: Checkpoint, manifest) -> NormStats:
    meta = ckpt.training.get("norm_stats")
    if meta:
        return NormStats.from_json(meta)
    return manifest.norm_stats or compute_norm_stats(manifest, "train")


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> str:
    spec = SynthSpec(mode=args.mode, num_classes=args.classes, size=args.size, channels=args.channels,
                     noise=args.noise, n_train=args.n_train, n_val=args.n_val, n_test=args.n_test, seed=args.seed,
                     task=args.task, clutter_fraction=args.clutter, name=args.name)
    manifest = synth_generate(spec, args.out)
    total = sum(len(v) for v in manifest.splits.values())
    return f"synth: {total} samples ({spec.mode}, {spec.task}) -> {Path(args.out) / 'manifest.json'}"


def cmd_pretrain(args) -> str:
    opts = resolve_options("pretrain", args)
    run = RunConfig.for_pretrain(opts)
    manifest = load_manifest(args.manifest)
    m = manifest.channels
    n = opts["n"] if opts["n"] is not None else m
    if opts["strategy"] == "baseline":
        if n != m:
            raise InvalidConfig(f"baseline strategy needs model input channels ({n}) == data channels ({m})",
                                field="n")
        strategy = Baseline()
    elif opts["strategy"] == "csp":
        strategy = Csp(CspConfig(m, n, opts["seed"], opts["redraw"]))
    else:
        raise InvalidConfig(f"unknown strategy {opts['strategy']!r}", field="strategy")
    spec = NetworkSpec(n, manifest.num_classes, opts["width"], "classification")
    ckpt = pretrain(manifest, strategy, spec, run.train, run.schedule, run.adamw,
                    log_path=args.log, checkpoint_path=args.out)
    top1 = ckpt.training.get("val_top1")
    metric = f"val_top1={top1:.4f}" if top1 is not None else "val_top1=n/a"
    return f"pretrain: {ckpt.strategy} {metric} -> {args.out}"


def cmd_finetune(args) -> str:
    opts = resolve_options("finetune", args)
    run = RunConfig.for_finetune(opts)
    manifest = load_manifest(args.manifest)
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    spec = None if ckpt is not None else NetworkSpec(len(run.train.bands or manifest.bands), manifest.num_classes,
                                                     opts["width"], "segmentation")
    out = finetune(manifest, ckpt, spec, run.train, run.schedule, run.adamw, log_path=args.log,
                   checkpoint_path=args.out)
    miou = out.training.get("val_miou")
    metric = f"val_miou={miou:.4f}" if miou is not None else "val_miou=n/a"
    return f"finetune: {out.strategy} {metric} -> {args.out}"


def cmd_eval(args) -> str:
    manifest = load_manifest(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.to_network()
    stats = _stats_for(ckpt, manifest)
    label = args.label or ckpt.strategy
    if ckpt.head == "classification":
        images, labels = manifest.load_split(args.split)
        x = np.stack([im.data for im in images])
        plan = eval_plan(Csp(CspConfig(x.shape[1], ckpt.input_channels)), x.shape[1]) \
            if x.shape[1] != ckpt.input_channels else None
        logits = classify(net, x, stats, channels=plan.sources if plan else None)
        y = np.asarray(labels)
        k5 = min(5, ckpt.num_classes)
        report = {
            "model": label, "split": args.split, "samples": int(len(y)),
            "top1": topk_accuracy(logits, y, 1), "top5": topk_accuracy(logits, y, k5), "top5_k": k5,
            "per_class": per_class_accuracy(logits, y, ckpt.num_classes), "classes": list(manifest.classes),
        }
        text = f"{label}: Top-1 {100 * report['top1']:.2f}  Top-5 {100 * report['top5']:.2f}"
        summary = f"eval: top1={report['top1']:.4f}"
    else:
        bands = _split(args.bands) if args.bands else ckpt.training.get("bands") or list(manifest.bands)
        idx = [manifest.bands.index(b) if b in manifest.bands else _unknown_band(b, manifest) for b in bands]
        if len(idx) != ckpt.input_channels:
            raise InvalidConfig(f"checkpoint takes {ckpt.input_channels} channels, {len(idx)} bands selected",
                                field="bands")
        if ckpt.training.get("norm_stats") is None:
            stats = select_stats(stats, idx)
        patch = args.patch_size or ckpt.training.get("patch_size") or 512
        images, masks = manifest.load_split(args.split)
        cm = ConfusionMatrix(ckpt.num_classes)
        for i, (img, mask) in enumerate(zip(images, masks)):
            pred = sliding_inference(net, img.data[idx], patch, args.stride, stats)
            cm.update(pred, mask, manifest.ignore_index)
            if args.label_dir:
                save_label_png(pred, Path(args.label_dir) / f"{args.split}_{i:05d}.png")
        rep = MetricsReport.from_confusion(cm, len(images), manifest.classes, model=label, split=args.split)
        report = {"model": label, "split": args.split, **rep.to_json()}
        text = f"{label} ({args.split})\n{rep.to_text()}"
        summary = f"eval: mIoU={rep.miou:.4f} mF1={rep.mf1:.4f}" if rep.miou is not None else "eval: mIoU=n/a"
    if args.report:
        dump_json(report, args.report)
    if args.text:
        _write_text(args.text, text)
    print(text)
    return f"{summary} -> {args.report or '-'}"


def _unknown_band(name, manifest):
    raise UnknownBand(f"unknown band {name!r}; manifest has {', '.join(manifest.bands)}", field=name)


def _parse_permutations(text: str | None, c: int, bands: list[str]) -> list[list[int]] | None:
    if not text:
        return None
    perms = []
    for item in text.split(";"):
        item = item.strip()
        if item == "identity":
            perms.append(list(range(c)))
        elif item == "reversed":
            perms.append(list(range(c - 1, -1, -1)))
        elif all(p.strip() in bands for p in item.split(",")):
            perms.append([bands.index(p.strip()) for p in item.split(",")])
        else:
            try:
                perms.append([int(p) for p in item.split(",")])
            except ValueError as exc:
                raise InvalidConfig(f"cannot parse permutation {item!r}", field="permutations") from exc
    return perms


def cmd_sensitivity(args) -> str:
    manifest = load_manifest(args.manifest)
    if manifest.task != "classification":
        raise InvalidConfig("sensitivity needs a classification manifest", field="manifest")
    images, labels = manifest.load_split(args.split)
    x = np.stack([im.data for im in images])
    y = np.asarray(labels)
    perms = _parse_permutations(args.permutations, x.shape[1], list(manifest.bands))
    reports = []
    for i, path in enumerate(args.checkpoint):
        ckpt = load_checkpoint(path)
        if ckpt.head != "classification":
            raise InvalidConfig(f"{path} is not a classification checkpoint", field="checkpoint")
        plan = eval_plan(Csp(CspConfig(x.shape[1], ckpt.input_channels)), x.shape[1]) \
            if x.shape[1] != ckpt.input_channels else None
        label = args.label[i] if args.label and i < len(args.label) else ckpt.strategy
        reports.append(permutation_sensitivity(
            ckpt.to_network(), x, y, perms, _stats_for(ckpt, manifest), bands=manifest.bands,
            class_names=manifest.classes, model_label=label, channels=plan.sources if plan else None))
    text = format_sensitivity_table(reports)
    if args.per_class:
        text += "\n\n" + "\n\n".join(f"{r['model']}\n{format_per_class_table(r)}" for r in reports)
    if args.report:
        dump_json({"kind": "sensitivity", "reports": reports}, args.report)
    if args.text:
        _write_text(args.text, text)
    print(text)
    worst = max(abs(row["delta_top1"]) for r in reports for row in r["permutations"])
    return f"sensitivity: {len(reports)} model(s), max |dTop-1|={100 * worst:.2f} -> {args.report or '-'}"


def cmd_csp_preview(args) -> str:
    cfg = CspConfig(args.m, args.n, args.seed, args.redraw)
    if args.image:
        image = load_raster(args.image)
        if image.channels != args.m:
            raise InvalidConfig(f"image has {image.channels} channels but --m is {args.m}", field="m")
    else:
        data, _ = make_sample(SynthSpec("spatial-cue", channels=args.m, size=args.size, seed=args.seed), "train", 0)
        image = RasterImage(data, tuple(band_names(args.m)))
    plan = draw_channel_plan(cfg, (args.epoch, args.sample))
    out = apply_plan(image, plan)
    names = ", ".join(out.bands)
    print(f"plan: {list(plan.sources)} ({names})")
    if args.out:
        out_dir = Path(args.out)
        for j, band in enumerate(out.bands):
            save_png(RasterImage(out.data[j:j + 1], (band,)), out_dir / f"plane_{j}_{band.replace('#', '_')}.png")
    return f"csp-preview: {cfg.tag} x={cfg.x} -> {args.out or '-'}"


def _load_report_inputs(paths) -> tuple[list[dict], list[dict], dict[str, list[dict]]]:
    sens, evals, logs = [], [], {}
    for p in paths:
        path = Path(p)
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IOFailure(f"cannot read {path}: {exc}", field=str(path)) from exc
        try:
            if path.suffix == ".jsonl":
                logs[str(path)] = [json.loads(line) for line in raw.splitlines() if line.strip()]
                continue
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path} is not valid JSON: {exc}", field=str(path)) from exc
        if obj.get("kind") == "sensitivity":
            sens.extend(obj["reports"])
        elif "permutations" in obj:
            sens.append(obj)
        elif "miou" in obj or "top1" in obj:
            evals.append(obj)
        else:
            raise DataError(f"{path}: not a recognised report", field=str(path))
    return sens, evals, logs


def _segmentation_table(evals: list[dict]) -> str:
    seg = [e for e in evals if "miou" in e]
    if not seg:
        return ""
    classes = seg[0].get("classes") or [str(i) for i in range(len(seg[0]["iou"]))]
    model_w = max(8, *(len(e.get("model", "")) for e in seg))
    col_w = max(8, *(len(c) for c in classes))
    head = f"{'Method':<{model_w}}" + "".join(f"  {c:>{col_w}}" for c in classes) + f"  {'mF1':>7}  {'mIoU':>7}"
    lines = ["Per-class IoU", head]
    for e in seg:
        cells = "".join(f"  {_pct(v):>{col_w}}" for v in e["iou"])
        lines.append(f"{e.get('model', ''):<{model_w}}{cells}  {_pct(e['mf1']):>7}  {_pct(e['miou']):>7}")
    return "\n".join(lines)


def _pct(v) -> str:
    return "-" if v is None else f"{100 * float(v):.2f}"


def _log_table(logs: dict[str, list[dict]]) -> str:
    if not logs:
        return ""
    lines = ["Training logs", f"{'log':<40}  {'steps':>6}  {'final loss':>10}  {'last val':>9}"]
    for name, records in logs.items():
        steps = max((r.get("step", 0) for r in records), default=0)
        losses = [r["loss"] for r in records if "loss" in r]
        vals = [r.get("val_top1", r.get("val_miou")) for r in records if "val_top1" in r or "val_miou" in r]
        vals = [v for v in vals if v is not None]
        final = f"{losses[-1]:.4f}" if losses else "-"
        lines.append(f"{Path(name).name:<40}  {steps:>6}  {final:>10}  {_pct(vals[-1]) if vals else '-':>9}")
    return "\n".join(lines)


def cmd_report(args) -> str:
    sens, evals, logs = _load_report_inputs(args.inputs)
    parts = []
    if sens:
        parts.append("Channel-order sensitivity\n" + format_sensitivity_table(sens))
        if args.per_class:
            parts.extend(f"{r['model']} per-class accuracy\n{format_per_class_table(r)}" for r in sens)
    cls_evals = [e for e in evals if "top1" in e and "miou" not in e]
    if cls_evals:
        parts.append("Classification\n" + "\n".join(
            f"{e.get('model', ''):<12}  Top-1 {_pct(e['top1'])}  Top-5 {_pct(e.get('top5'))}" for e in cls_evals))
    seg = _segmentation_table(evals)
    if seg:
        parts.append(seg)
    tlog = _log_table(logs)
    if tlog:
        parts.append(tlog)
    text = "\n\n".join(parts) if parts else "(no report inputs)"
    if args.out:
        _write_text(args.out, text)
    if args.json:
        dump_json({"sensitivity": sens, "evaluations": evals,
                   "logs": {k: v[-1] if v else None for k, v in logs.items()}}, args.json)
    print(text)
    return f"report: {len(sens)} sensitivity, {len(evals)} eval, {len(logs)} log input(s) -> {args.out or '-'}"


# -- argument parsing ----------------------------------------------------------

def _add_common_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (command-line flags take precedence)")
    p.add_argument("--manifest", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", help="JSONL training log path")
    p.add_argument("--width", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--warmup", type=int)
    p.add_argument("--start-factor", dest="start_factor", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
    p.add_argument("--scales", type=_floats, help="comma-separated resize scales")
    p.add_argument("--flip-prob", dest="flip_prob", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chanshuffle", description="Channel-shuffling pre-training toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--mode", choices=MODES, default="spatial-cue")
    p.add_argument("--task", choices=TASKS, default="classification")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--n-train", dest="n_train", type=int, default=200)
    p.add_argument("--n-val", dest="n_val", type=int, default=50)
    p.add_argument("--n-test", dest="n_test", type=int, default=0)
    p.add_argument("--clutter", type=float, default=0.1, help="fraction of ignored regions (segmentation)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="classification pre-training (baseline or channel shuffling)")
    _add_common_training(p)
    p.add_argument("--strategy", choices=("baseline", "csp"))
    p.add_argument("--n", type=int, help="model input channels (CSP-n)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--redraw", choices=("sample", "image"))
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="segmentation fine-tuning from a checkpoint or from scratch")
    _add_common_training(p)
    p.add_argument("--checkpoint", help="pre-trained checkpoint (omit to train from scratch)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--power", type=float)
    p.add_argument("--stride", type=int, help="validation tiling stride")
    p.add_argument("--bands", help="band subset in model order, e.g. IR,R,G")
    p.add_argument("--val-every", dest="val_every", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--bands")
    p.add_argument("--label", help="model label used in reports")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--text", help="plain-text report path")
    p.add_argument("--label-dir", dest="label_dir", help="write predicted label maps as indexed PNGs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sensitivity", help="accuracy under channel permutations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, action="append", help="repeat to compare models")
    p.add_argument("--label", action="append", help="model label per checkpoint")
    p.add_argument("--split", default="val")
    p.add_argument("--permutations", help="';'-separated: identity, reversed, 2,1,0 or B,G,R")
    p.add_argument("--per-class", dest="per_class", action="store_true")
    p.add_argument("--report")
    p.add_argument("--text")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("csp-preview", help="show one channel-shuffle draw")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--redraw", choices=("sample", "image"), default="sample")
    p.add_argument("--image", help="MBR or PNG source image (default: a synthetic sample)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", help="directory for the output planes as PNG")
    p.set_defaults(func=cmd_csp_preview)

    p = sub.add_parser("report", help="render tables from JSON reports and JSONL logs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--per-class", dest="per_class", action="store_true")
    p.add_argument("--out", help="plain-text output path")
    p.add_argument("--json", help="combined JSON output path")
    p.set_defaults(func=cmd_report)
    return parser


def _exit_code(exc: ChanShuffleError) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, NumericError):
        return 4
    return 3


def _error_line(code: int, kind: str, field, message: str) -> str:
    return f"error code={code} kind={kind} field={field or '-'} message={json.dumps(message)}"


def _configure_logging() -> None:
    level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        summary = args.func(args)
    except ChanShuffleError as exc:
        code = _exit_code(exc)
        print(_error_line(code, type(exc).__name__, exc.field, str(exc)), file=sys.stderr)
        return code
    except OSError as exc:
        print(_error_line(3, "IOFailure", getattr(exc, "filename", None), str(exc)), file=sys.stderr)
        return 3
    print(summary)
    return 0


run = main

if __name__ == "__main__":
    sys.exit(main())
