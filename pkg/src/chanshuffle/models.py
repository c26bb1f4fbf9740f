"""Toy classifier/segmenter sharing one encoder, weight transfer and checkpoints.

Encoder (both heads)::

    stem   conv 3x3 n -> w,  stride 1, pad 1, relu
    conv2  conv 3x3 w -> 2w, stride 2, pad 1, relu
    conv3  conv 3x3 2w -> 2w, stride 2, pad 1, relu

Classification head: global average pool, linear 2w -> K.
Segmentation head: upsample x2, conv 3x3 2w -> w + relu, upsample x2,
conv 1x1 w -> K.

Checkpoint container (little-endian)::

    b"CSPK", u32 version (= 1)
    u32 metadata length, UTF-8 JSON metadata
    u32 tensor count
    per tensor: u16 name length, name, u8 ndim, u32 dims[ndim], f32 values
"""
from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, conv2d, global_avg_pool, linear, relu, upsample_nearest
from .errors import (
    BadMagic,
    CorruptHeader,
    IOFailure,
    InvalidConfig,
    MissingTensor,
    ShapeMismatch,
    VersionMismatch,
    WidthMismatch,
)
from .raster import atomic_write_bytes

log = logging.getLogger(__name__)

HEADS = ("classification", "segmentation")
CKPT_MAGIC = b"CSPK"
CKPT_VERSION = 1
STEM = "encoder.stem"


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int
    num_classes: int
    width: int = 32
    head: str = "classification"

    def __post_init__(self):
        for name in ("input_channels", "num_classes", "width"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1", field=name)
        if self.head not in HEADS:
            raise InvalidConfig(f"head must be one of {HEADS}", field="head")

    def layers(self) -> list[tuple[str, tuple[int, ...], int, int]]:
        """(name, weight shape, stride, padding) in forward order; linear layers use stride 0."""
        n, w, k = self.input_channels, self.width, self.num_classes
        enc = [
            (STEM, (w, n, 3, 3), 1, 1),
            ("encoder.conv2", (2 * w, w, 3, 3), 2, 1),
            ("encoder.conv3", (2 * w, 2 * w, 3, 3), 2, 1),
        ]
        if self.head == "classification":
            return enc + [("head.fc", (k, 2 * w), 0, 0)]
        return enc + [
            ("decoder.conv1", (w, 2 * w, 3, 3), 1, 1),
            ("decoder.classifier", (k, w, 1, 1), 1, 0),
        ]


def encoder_names(spec: NetworkSpec) -> list[str]:
    return [f"{layer}.{p}" for layer, *_ in spec.layers() if layer.startswith("encoder.")
            for p in ("weight", "bias")]


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """He-normal weights (variance 2 / fan_in), zero biases, drawn in layer order."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, _, _ in spec.layers():
        fan_in = int(np.prod(shape[1:]))
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(shape[0], dtype), requires_grad=True)
    return params


class Network:
    """Parameters plus the fixed forward topology for one :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, params: dict[str, Tensor]):
        self.spec = spec
        expected = [f"{n}.{p}" for n, *_ in spec.layers() for p in ("weight", "bias")]
        if list(params) != expected:
            missing = [n for n in expected if n not in params]
            raise MissingTensor(f"parameter set mismatch; missing {missing}", field=missing[0] if missing else None)
        self.params = params

    @property
    def encoder_names(self) -> list[str]:
        return encoder_names(self.spec)

    @property
    def head_names(self) -> list[str]:
        enc = set(self.encoder_names)
        return [n for n in self.params if n not in enc]

    @property
    def dtype(self):
        return self.params[f"{STEM}.weight"].dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def astype(self, dtype) -> Network:
        return Network(self.spec, {k: Tensor(v.data.astype(dtype), requires_grad=True)
                                   for k, v in self.params.items()})

    def copy(self) -> Network:
        return self.astype(self.dtype)

    def _as_tensor(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=self.dtype), dtype=self.dtype)

    def encode(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        p = self.params if params is None else {**self.params, **params}
        h = self._as_tensor(x)
        if h.data.ndim != 4 or h.shape[1] != self.spec.input_channels:
            raise ShapeMismatch(f"expected (N, {self.spec.input_channels}, H, W) input, got {h.shape}",
                                field="input_channels")
        for name, _, stride, pad in self.spec.layers()[:3]:
            h = relu(conv2d(h, p[f"{name}.weight"], p[f"{name}.bias"], stride, pad))
        return h

    def forward(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        """Logits: (N, K) for classifiers, (N, K, H, W) for segmenters."""
        p = self.params if params is None else {**self.params, **params}
        h = self.encode(x, p)
        if self.spec.head == "classification":
            return linear(global_avg_pool(h), p["head.fc.weight"], p["head.fc.bias"])
        h = upsample_nearest(h, 2)
        h = relu(conv2d(h, p["decoder.conv1.weight"], p["decoder.conv1.bias"], 1, 1))
        h = upsample_nearest(h, 2)
        return conv2d(h, p["decoder.classifier.weight"], p["decoder.classifier.bias"], 1, 0)

    __call__ = forward

    def predict_scores(self, x, batch_size: int = 64) -> np.ndarray:
        """Softmax probabilities without recording gradients."""
        from .autodiff.ops import log_softmax

        x = np.asarray(x)
        outs = []
        frozen = {k: Tensor(v.data, dtype=v.dtype) for k, v in self.params.items()}
        for i in range(0, len(x), batch_size):
            z = self.forward(x[i:i + batch_size], frozen).data
            z = np.moveaxis(z, 1, -1)
            outs.append(np.moveaxis(np.exp(log_softmax(z.astype(np.float64))), -1, 1))
        return np.concatenate(outs) if outs else np.zeros((0, self.spec.num_classes))


def build_classifier(n: int, K: int, w: int = 32, seed: int = 0, dtype=np.float32) -> Network:
    spec = NetworkSpec(n, K, w, "classification")
    return Network(spec, init_params(spec, seed, dtype))


def build_segmenter(n: int, K: int, w: int = 32, seed: int = 0, dtype=np.float32) -> Network:
    spec = NetworkSpec(n, K, w, "segmentation")
    return Network(spec, init_params(spec, seed, dtype))


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    return Network(spec, init_params(spec, seed, dtype))


def adapt_input_stem(stem_weight: np.ndarray, n_new: int) -> np.ndarray:
    """Resize a stem kernel's input axis from C to ``n_new`` channels.

    The first ``min(C, n_new)`` input slices are kept, extra slices are the
    mean of the original ones, and everything is scaled by ``C / n_new`` so
    i.i.d. inputs give pre-activations of the same expected magnitude.
    """
    w = np.asarray(stem_weight)
    c_old = w.shape[1]
    if n_new < 1:
        raise InvalidConfig("n_new must be >= 1", field="n_new")
    if n_new == c_old:
        return w.copy()
    keep = min(c_old, n_new)
    out = np.empty((w.shape[0], n_new) + w.shape[2:], dtype=w.dtype)
    out[:, :keep] = w[:, :keep]
    if n_new > c_old:
        out[:, c_old:] = w.mean(axis=1, keepdims=True)
    return (out * (c_old / n_new)).astype(w.dtype)


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    input_channels: int
    width: int
    num_classes: int
    head: str
    strategy: str
    tensors: dict[str, np.ndarray]
    training: dict = field(default_factory=dict)
    version: int = CKPT_VERSION

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec(self.input_channels, self.num_classes, self.width, self.head)

    @property
    def encoder_names(self) -> list[str]:
        return [n for n in self.tensors if n.startswith("encoder.")]

    @property
    def head_names(self) -> list[str]:
        return [n for n in self.tensors if not n.startswith("encoder.")]

    @classmethod
    def from_network(cls, net: Network, strategy: str = "Baseline", training: dict | None = None) -> Checkpoint:
        s = net.spec
        return cls(s.input_channels, s.width, s.num_classes, s.head, strategy,
                   {k: v.data.astype(np.float32) for k, v in net.params.items()}, dict(training or {}))

    def to_network(self, dtype=np.float32) -> Network:
        spec = self.spec
        params = {}
        for name, shape, _, _ in spec.layers():
            for part, shp in (("weight", shape), ("bias", (shape[0],))):
                key = f"{name}.{part}"
                if key not in self.tensors:
                    raise MissingTensor(f"checkpoint lacks tensor {key}", field=key)
                arr = self.tensors[key]
                if arr.shape != shp:
                    raise ShapeMismatch(f"{key}: shape {arr.shape} != {shp}", field=key)
                params[key] = Tensor(arr.astype(dtype), requires_grad=True)
        return Network(spec, params)

    def metadata(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "width": self.width,
            "num_classes": self.num_classes,
            "head": self.head,
            "strategy": self.strategy,
            "encoder": self.encoder_names,
            "head_tensors": self.head_names,
            "training": self.training,
        }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    meta = json.dumps(ckpt.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.payload):
            raise CorruptHeader("checkpoint truncated")
        out = self.payload[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(payload: bytes) -> Checkpoint:
    r = _Reader(payload)
    if len(payload) < 4 or r.take(4) != CKPT_MAGIC:
        raise BadMagic("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CKPT_VERSION}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader("checkpoint metadata is not valid JSON") from exc
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="strict")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(payload):
        raise CorruptHeader(f"{len(payload) - r.pos} trailing bytes after last tensor")
    try:
        ckpt = Checkpoint(int(meta["input_channels"]), int(meta["width"]), int(meta["num_classes"]),
                          meta["head"], meta["strategy"], tensors, meta.get("training", {}), version)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"checkpoint metadata incomplete: {exc}") from exc
    missing = [n for n in encoder_names(ckpt.spec) if n not in tensors]
    if missing:
        raise MissingTensor(f"checkpoint lacks encoder tensor {missing[0]}", field=missing[0])
    return ckpt


def save_checkpoint(net_or_ckpt, path, meta: dict | None = None, strategy: str | None = None) -> Checkpoint:
    """Write a network (or an existing Checkpoint) atomically; returns what was written."""
    if isinstance(net_or_ckpt, Checkpoint):
        ckpt = net_or_ckpt
    else:
        meta = dict(meta or {})
        ckpt = Checkpoint.from_network(net_or_ckpt, strategy or meta.pop("strategy", "Baseline"), meta)
    try:
        atomic_write_bytes(path, encode_checkpoint(ckpt))
    except OSError as exc:
        raise IOFailure(f"cannot write checkpoint {path}: {exc}", field="checkpoint") from exc
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read checkpoint {path}: {exc}", field="checkpoint") from exc
    return decode_checkpoint(payload)


def transfer_encoder(ckpt: Checkpoint, target: Network) -> Network:
    """Copy the checkpoint's encoder into a copy of ``target``; head stays fresh.

    A stem trained for a different channel count goes through
    :func:`adapt_input_stem` first.
    """
    if ckpt.width != target.spec.width:
        raise WidthMismatch(f"checkpoint width {ckpt.width} != target width {target.spec.width}", field="width")
    params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in target.params.items()}
    for name in target.encoder_names:
        if name not in ckpt.tensors:
            raise MissingTensor(f"checkpoint lacks encoder tensor {name}", field=name)
        src = ckpt.tensors[name]
        if name == f"{STEM}.weight" and ckpt.input_channels != target.spec.input_channels:
            log.info("adapting stem from %d to %d input channels", ckpt.input_channels, target.spec.input_channels)
            src = adapt_input_stem(src, target.spec.input_channels)
        if src.shape != params[name].shape:
            raise ShapeMismatch(f"{name}: checkpoint shape {src.shape} != target {params[name].shape}", field=name)
        params[name] = Tensor(src.astype(target.dtype), requires_grad=True)
    return Network(target.spec, params)
