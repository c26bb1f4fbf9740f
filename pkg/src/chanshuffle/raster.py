"""Multiband raster images and their on-disk containers.

The native container (``.mbr``) is little-endian::

    magic    b"MBR1"
    u32      version (= 1)
    u32      C, H, W
    u8       dtype code (0 = u8, 1 = u16, 2 = f32)
    u8 x 3   reserved (zero)
    C times: u16 name length, UTF-8 name bytes
    C planes of H*W values, row-major

PNG is supported for import (1-4 channels, 8/16-bit) and for exporting
label maps as indexed-colour images.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadMagic, CorruptHeader, IOFailure, ShapeMismatch, UnsupportedDtype

MAGIC = b"MBR1"
VERSION = 1
DTYPE_CODES = {np.dtype(np.uint8): 0, np.dtype(np.uint16): 1, np.dtype(np.float32): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_HEADER = struct.Struct("<4sIIIIB3x")

DEFAULT_BAND_NAMES = {1: ("L",), 2: ("L", "A"), 3: ("R", "G", "B"), 4: ("R", "G", "B", "A")}


def disambiguate(names: Sequence[str]) -> tuple[str, ...]:
    """Suffix repeated names: ``R, G, R`` becomes ``R, G, R#2``."""
    seen: dict[str, int] = {}
    out = []
    taken = set(names)
    for name in names:
        k = seen.get(name, 0) + 1
        seen[name] = k
        if k == 1:
            out.append(name)
            continue
        cand = f"{name}#{k}"
        while cand in taken:
            k += 1
            cand = f"{name}#{k}"
        seen[name] = k
        taken.add(cand)
        out.append(cand)
    return tuple(out)


def base_band_name(name: str) -> str:
    return name.split("#", 1)[0]


@dataclass(frozen=True, eq=False)
class RasterImage:
    """C x H x W planar image with one name per band."""

    data: np.ndarray
    bands: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ShapeMismatch(f"raster data must be (C, H, W), got {data.shape}", field="data")
        bands = tuple(self.bands)
        if len(bands) != data.shape[0]:
            raise ShapeMismatch(f"{len(bands)} band names for {data.shape[0]} channels", field="bands")
        if len(set(bands)) != len(bands):
            raise ShapeMismatch(f"band names must be unique: {bands}", field="bands")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "bands", bands)

    @classmethod
    def from_array(cls, data, bands: Sequence[str] | None = None) -> RasterImage:
        data = np.asarray(data)
        if data.ndim == 2:
            data = data[None]
        if bands is None:
            c = data.shape[0]
            bands = DEFAULT_BAND_NAMES.get(c, tuple(f"B{i}" for i in range(c)))
        return cls(data, tuple(bands))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def with_data(self, data: np.ndarray, bands: Sequence[str] | None = None) -> RasterImage:
        return RasterImage(data, self.bands if bands is None else tuple(bands))

    def equals(self, other: RasterImage) -> bool:
        """Bitwise equality of data, dtype and band names."""
        return (self.bands == other.bands and self.data.dtype == other.data.dtype
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    def __repr__(self) -> str:
        return f"RasterImage(bands={self.bands}, shape={self.data.shape}, dtype={self.dtype})"


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_mbr(image: RasterImage) -> bytes:
    dtype = np.dtype(image.dtype)
    if dtype not in DTYPE_CODES:
        raise UnsupportedDtype(f"cannot store dtype {dtype} in MBR (u8, u16, f32 only)", field="dtype")
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, image.channels, image.height, image.width, DTYPE_CODES[dtype]))
    for name in image.bands:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    buf.write(np.ascontiguousarray(image.data, dtype=dtype.newbyteorder("<")).tobytes())
    return buf.getvalue()


def decode_mbr(payload: bytes) -> RasterImage:
    if len(payload) < 4 or payload[:4] != MAGIC:
        raise BadMagic("not an MBR raster (bad magic)")
    if len(payload) < _HEADER.size:
        raise CorruptHeader("truncated MBR header")
    _, version, c, h, w, code = _HEADER.unpack_from(payload, 0)
    if version != VERSION:
        raise CorruptHeader(f"unsupported MBR version {version}")
    if code not in CODE_DTYPES:
        raise UnsupportedDtype(f"unknown MBR dtype code {code}")
    if c < 1:
        raise CorruptHeader("MBR raster with zero channels")
    pos = _HEADER.size
    bands = []
    for _ in range(c):
        if pos + 2 > len(payload):
            raise CorruptHeader("truncated band-name table")
        (n,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        if pos + n > len(payload):
            raise CorruptHeader("truncated band name")
        try:
            bands.append(payload[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorruptHeader("band name is not UTF-8") from exc
        pos += n
    dtype = CODE_DTYPES[code].newbyteorder("<")
    nbytes = c * h * w * dtype.itemsize
    if len(payload) - pos != nbytes:
        raise CorruptHeader(f"expected {nbytes} bytes of pixel data, found {len(payload) - pos}")
    data = np.frombuffer(payload, dtype=dtype, count=c * h * w, offset=pos)
    data = data.astype(CODE_DTYPES[code]).reshape(c, h, w)
    try:
        return RasterImage(data, tuple(bands))
    except ShapeMismatch as exc:
        raise CorruptHeader(str(exc)) from exc


def save_raster(image: RasterImage, path) -> None:
    """Write ``image`` as MBR (atomically)."""
    try:
        atomic_write_bytes(path, encode_mbr(image))
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def load_raster(path) -> RasterImage:
    """Read an MBR container or a PNG image; values are not rescaled."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}", field=str(path)) from exc
    if payload[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(payload)
    return decode_mbr(payload)


def _decode_png(payload: bytes) -> RasterImage:
    from PIL import Image

    with Image.open(io.BytesIO(payload)) as im:
        if im.mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
        arr = np.array(im)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    if arr.dtype == np.int32:  # PIL "I" mode for 16-bit greyscale
        arr = arr.astype(np.uint16)
    if arr.dtype not in (np.uint8, np.uint16):
        raise UnsupportedDtype(f"PNG pixel type {arr.dtype} not supported")
    return RasterImage.from_array(np.ascontiguousarray(arr))


def save_png(image: RasterImage, path) -> None:
    """Export a 1-4 channel u8/u16 raster as PNG (16-bit only for one channel)."""
    from PIL import Image

    data = image.data
    if data.dtype == np.float32:
        lo, hi = float(data.min()), float(data.max())
        data = np.zeros(data.shape, np.uint8) if hi <= lo else ((data - lo) / (hi - lo) * 255).round().astype(np.uint8)
    if image.channels == 1:
        im = Image.fromarray(data[0]) if data.dtype == np.uint8 else Image.fromarray(data[0].astype(np.uint16), mode="I;16")
    elif image.channels in (3, 4) and data.dtype == np.uint8:
        im = Image.fromarray(np.moveaxis(data, 0, -1))
    else:
        raise UnsupportedDtype("PNG export supports 1-channel u8/u16 or 3/4-channel u8")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def label_palette(num_entries: int = 256) -> np.ndarray:
    """Palette for label PNGs: class ids 0..254 get distinct colours, 255 is black.

    Colours follow the common bit-interleaving scheme (PASCAL VOC style):
    bit ``j`` of the id contributes bit ``7 - j // 3`` of the R, G or B value.
    """
    pal = np.zeros((num_entries, 3), np.uint8)
    for i in range(num_entries):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = (r, g, b)
    pal[255] = (0, 0, 0)
    return pal


def save_label_png(labels: np.ndarray, path) -> None:
    """Write an (H, W) label map as an indexed-colour PNG."""
    from PIL import Image

    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeMismatch("label map must be 2-D", field="labels")
    if labels.min() < 0 or labels.max() > 255:
        raise UnsupportedDtype("label ids must fit in 0..255")
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    im.putpalette(label_palette().reshape(-1).tolist())
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_label_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.array(im)
