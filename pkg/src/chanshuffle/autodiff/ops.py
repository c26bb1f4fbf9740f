"""Network ops with hand-written backward rules.

Only what the toy encoder/decoder networks use.  Every op accepts float32 or
float64 tensors and keeps the input dtype, so the same code serves training
(float32) and finite-difference verification (float64).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ClassOutOfRange, EmptyBatch, ShapeMismatch
from .tensor import Tensor


def _require_ndim(t: Tensor, ndim: int, name: str) -> None:
    if t.data.ndim != ndim:
        raise ShapeMismatch(f"{name} must be {ndim}-D, got shape {t.shape}", field=name)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) strided view over the spatial axes."""
    v = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, computed as im2col + matmul."""
    _require_ndim(x, 4, "input")
    _require_ndim(weight, 4, "weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeMismatch(f"input has {cin} channels but weight expects {wcin}", field="weight")
    if stride < 1 or padding < 0:
        raise ShapeMismatch("stride must be >= 1 and padding >= 0", field="stride")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input", field="weight")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({cout},)", field="bias")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = _windows(xp, kh, kw, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, cin, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            hspan = stride * (ho - 1) + 1
            wspan = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + hspan:stride, j:j + wspan:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, bw, "conv2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def bw(g):
        return (g * mask,)

    return Tensor.from_op(out, (x,), bw, "relu")


def max_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Max over k x k windows; gradient goes to the first row-major maximum."""
    _require_ndim(x, 4, "input")
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeMismatch(f"pool window {k} larger than input {h}x{w}", field="k")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = _windows(x.data, k, k, stride).reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        hspan = stride * (ho - 1) + 1
        wspan = stride * (wo - 1) + 1
        for p in range(k * k):
            i, j = divmod(p, k)
            gx[:, :, i:i + hspan:stride, j:j + wspan:stride] += np.where(idx == p, g, 0)
        return (gx,)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), bw, "max_pool2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _require_ndim(x, 4, "input")
    if factor < 1:
        raise ShapeMismatch("factor must be positive", field="factor")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), bw, "upsample_nearest")


def global_avg_pool(x: Tensor) -> Tensor:
    _require_ndim(x, 4, "input")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        share = (g / (h * w)).astype(x.dtype, copy=False)
        return (np.broadcast_to(share[:, :, None, None], x.shape).copy(),)

    return Tensor.from_op(out, (x,), bw, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    _require_ndim(x, 2, "input")
    _require_ndim(weight, 2, "weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"input dim {x.shape[1]} != weight dim {weight.shape[1]}", field="weight")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({weight.shape[0]},)", field="bias")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, bw, "linear")


def _flatten_logits(logits: np.ndarray) -> np.ndarray:
    if logits.ndim == 2:
        return logits
    k = logits.shape[1]
    return np.moveaxis(logits, 1, -1).reshape(-1, k)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction (plain numpy, no tape)."""
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy_masked(logits: Tensor, targets, ignore_index: int = 255) -> Tensor:
    """Mean cross-entropy over positions whose target is not ``ignore_index``.

    ``logits`` is (N, K) or (N, K, H, W); ``targets`` has the logits shape
    without the class axis.
    """
    if logits.data.ndim not in (2, 4):
        raise ShapeMismatch(f"logits must be 2-D or 4-D, got {logits.shape}", field="logits")
    targets = np.asarray(targets)
    expected = (logits.shape[0],) + logits.shape[2:]
    if targets.shape != expected:
        raise ShapeMismatch(f"targets shape {targets.shape} != {expected}", field="targets")
    k = logits.shape[1]
    z = _flatten_logits(logits.data)
    t = targets.reshape(-1).astype(np.int64)
    valid = t != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise EmptyBatch("every target position is ignored")
    tv = t[valid]
    if tv.min() < 0 or tv.max() >= k:
        raise ClassOutOfRange(f"targets must lie in [0, {k}) or equal {ignore_index}", field="targets")

    logp = log_softmax(z[valid])
    picked = logp[np.arange(count), tv]
    loss = np.asarray(-picked.sum() / count, dtype=logits.dtype)

    def bw(g):
        p = np.exp(logp)
        p[np.arange(count), tv] -= 1
        dz = np.zeros_like(z)
        dz[valid] = p * (g / count)
        if logits.data.ndim == 4:
            n, _, h, w = logits.shape
            dz = np.ascontiguousarray(dz.reshape(n, h, w, k).transpose(0, 3, 1, 2))
        return (dz.astype(logits.dtype, copy=False),)

    return Tensor.from_op(loss, (logits,), bw, "softmax_cross_entropy_masked")
