"""AdamW with decoupled weight decay on conv/linear weights only."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.05

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfig("betas must lie in (0, 1)", field="beta1")
        if self.epsilon <= 0:
            raise InvalidConfig("epsilon must be positive", field="epsilon")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be non-negative", field="weight_decay")


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def decays(name: str) -> bool:
    return name.endswith(".weight")


def adamw_step(params: dict, grads: dict[str, np.ndarray], state: OptimState, lr: float,
               cfg: AdamWConfig) -> OptimState:
    """One in-place AdamW update of ``params`` (name -> Tensor or ndarray).

    ``state.step`` is incremented before bias correction, so the first call
    uses t = 1.
    """
    state.step += 1
    t = state.step
    c1 = 1 - cfg.beta1 ** t
    c2 = 1 - cfg.beta2 ** t
    for name, p in params.items():
        theta = p.data if hasattr(p, "requires_grad") else p
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatch(f"{name}: grad shape {g.shape} != param shape {theta.shape}", field=name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        if cfg.weight_decay and decays(name):
            update = update + cfg.weight_decay * theta
        theta -= (lr * update).astype(theta.dtype, copy=False)
    return state
