"""Cut large scenes into fixed-size patches and stitch per-patch outputs back."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GridMismatch, InvalidConfig
from ..raster import RasterImage


def window_starts(size: int, patch: int, stride: int) -> tuple[list[int], int]:
    """Window offsets along one axis and the padded axis length.

    Scenes no larger than ``patch`` become one window.  With ``stride ==
    patch`` the axis is padded up to a whole number of patches so tiles
    concatenate exactly.  With overlap, the last window is clamped flush to
    the scene edge instead of running into padding.
    """
    if size <= patch:
        return [0], patch
    if stride == patch:
        count = -(-size // patch)
        return [i * patch for i in range(count)], count * patch
    count = -(-(size - patch) // stride) + 1
    return [min(i * stride, size - patch) for i in range(count)], size


@dataclass(frozen=True)
class TileGrid:
    height: int
    width: int
    patch: int
    stride: int
    padded_height: int
    padded_width: int
    row_starts: tuple[int, ...]
    col_starts: tuple[int, ...]
    pad_mode: str = "reflect"

    @classmethod
    def plan(cls, height: int, width: int, patch: int, stride: int | None = None) -> TileGrid:
        stride = patch if stride is None else stride
        if patch < 1 or not 1 <= stride <= patch:
            raise InvalidConfig(f"need patch >= 1 and 1 <= stride <= patch (patch={patch}, stride={stride})",
                                field="stride")
        if height < 1 or width < 1:
            raise InvalidConfig("scene must be non-empty", field="image")
        rows, ph = window_starts(height, patch, stride)
        cols, pw = window_starts(width, patch, stride)
        return cls(height, width, patch, stride, ph, pw, tuple(rows), tuple(cols))

    @property
    def n_rows(self) -> int:
        return len(self.row_starts)

    @property
    def n_cols(self) -> int:
        return len(self.col_starts)

    def __len__(self) -> int:
        return self.n_rows * self.n_cols

    def windows(self):
        """Row-major (top, left) offsets."""
        for r in self.row_starts:
            for c in self.col_starts:
                yield r, c


def pad_array(data: np.ndarray, grid: TileGrid) -> np.ndarray:
    ph = grid.padded_height - grid.height
    pw = grid.padded_width - grid.width
    if ph == 0 and pw == 0:
        return data
    return np.pad(data, ((0, 0), (0, ph), (0, pw)), mode=grid.pad_mode)


def tile(image, patch: int, stride: int | None = None) -> tuple[list, TileGrid]:
    """Split a (C, H, W) raster into row-major ``patch x patch`` tiles.

    Returns RasterImage tiles for RasterImage input and arrays otherwise.
    """
    data = image.data if isinstance(image, RasterImage) else np.asarray(image)
    if data.ndim == 2:
        data = data[None]
    grid = TileGrid.plan(data.shape[1], data.shape[2], patch, stride)
    padded = pad_array(data, grid)
    tiles = [padded[:, r:r + patch, c:c + patch] for r, c in grid.windows()]
    if isinstance(image, RasterImage):
        tiles = [RasterImage(np.ascontiguousarray(t), image.bands) for t in tiles]
    return tiles, grid


def stitch(tile_outputs, grid: TileGrid) -> np.ndarray:
    """Average overlapping per-tile score maps and crop to the scene size.

    Each output is (K, P, P) or (P, P); the result is (K, H, W) (or (H, W))
    in float64.  Overlaps use a running mean in window order, so the result
    does not depend on the order tiles were computed in, and identical
    contributions come back bit-exact.
    """
    tile_outputs = list(tile_outputs)
    if len(tile_outputs) != len(grid):
        raise GridMismatch(f"{len(tile_outputs)} tile outputs for a {len(grid)}-tile grid", field="tiles")
    squeeze = np.asarray(tile_outputs[0]).ndim == 2
    first = np.asarray(tile_outputs[0])
    k = 1 if squeeze else first.shape[0]
    acc = np.zeros((k, grid.padded_height, grid.padded_width), np.float64)
    hits = np.zeros((grid.padded_height, grid.padded_width), np.int64)
    p = grid.patch
    for (r, c), out in zip(grid.windows(), tile_outputs):
        out = np.asarray(out, dtype=np.float64)
        if squeeze:
            out = out[None]
        if out.shape != (k, p, p):
            raise GridMismatch(f"tile output shape {out.shape} != {(k, p, p)}", field="tiles")
        hits[r:r + p, c:c + p] += 1
        region = acc[:, r:r + p, c:c + p]
        region += (out - region) / hits[r:r + p, c:c + p]
    acc = acc[:, :grid.height, :grid.width]
    return acc[0] if squeeze else acc
