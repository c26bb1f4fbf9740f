"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float):
    """Return (central, forward, backward) difference quotients per coordinate."""
    x = np.array(x, dtype=np.float64)
    f0 = float(f(Tensor(x, dtype=np.float64)).data)
    central = np.empty_like(x)
    fwd = np.empty_like(x)
    bwd = np.empty_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(x, dtype=np.float64)).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(x, dtype=np.float64)).data)
        flat[i] = orig
        central.flat[i] = (fp - fm) / (2 * eps)
        fwd.flat[i] = (fp - f0) / eps
        bwd.flat[i] = (f0 - fm) / eps
    return central, fwd, bwd


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    backward(f(t))
    return t.grad


def kink_mask(fwd: np.ndarray, bwd: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Coordinates where the one-sided slopes disagree, i.e. a kink lies within eps."""
    scale = np.maximum(np.maximum(np.abs(fwd), np.abs(bwd)), 1.0)
    return np.abs(fwd - bwd) > tol * scale


def finite_diff_check(f: Callable[[Tensor], Tensor], at, eps: float = 1e-6, *,
                      exclude: np.ndarray | None = None, kink_tol: float = 1e-3,
                      rel_floor: float = 1e-3, return_details: bool = False):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a float64 tensor to a scalar tensor.  The error per coordinate
    is ``|a - n| / max(|a|, |n|, rel_floor * g, 1e-8)`` with ``g`` the
    largest gradient magnitude in the tensor: components far below the
    tensor's scale sit under the roundoff of a central difference, so their
    error is measured against that floor instead of their own size.
    Coordinates with a kink within ``eps`` (detected by disagreeing one-sided
    differences) and those flagged in ``exclude`` are left out of the maximum.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    x = at.data if isinstance(at, Tensor) else np.asarray(at)
    x = np.array(x, dtype=np.float64)
    a = analytic_grad(f, x)
    central, fwd, bwd = numerical_grad(f, x, eps)
    skip = kink_mask(fwd, bwd, kink_tol)
    if exclude is not None:
        skip |= np.asarray(exclude, dtype=bool)
    mag = np.maximum(np.abs(a), np.abs(central))
    floor = max(rel_floor * float(np.where(skip, 0.0, mag).max(initial=0.0)), 1e-8)
    err = np.abs(a - central) / np.maximum(mag, floor)
    err = np.where(skip, 0.0, err)
    worst = float(err.max()) if err.size else 0.0
    if return_details:
        return worst, {"analytic": a, "numeric": central, "excluded": skip, "errors": err}
    return worst
