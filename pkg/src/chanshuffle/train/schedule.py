"""Learning-rate schedules: linear warmup followed by cosine or polynomial decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ..errors import InvalidConfig

DECAYS = ("cosine", "poly")


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    warmup: int
    total: int
    start_factor: float = 1e-3
    decay: str = "cosine"
    power: float = 1.0
    min_lr: float = 0.0
    unit: str = "iteration"

    def __post_init__(self):
        if self.decay not in DECAYS:
            raise InvalidConfig(f"decay must be one of {DECAYS}", field="decay")
        if self.unit not in ("iteration", "epoch"):
            raise InvalidConfig("unit must be 'iteration' or 'epoch'", field="unit")
        if self.total < 1 or not 0 <= self.warmup < self.total:
            raise InvalidConfig(f"need 0 <= warmup < total (warmup={self.warmup}, total={self.total})",
                                field="warmup")
        if not 0 < self.start_factor <= 1:
            raise InvalidConfig("start_factor must lie in (0, 1]", field="start_factor")
        if self.power <= 0:
            raise InvalidConfig("power must be positive", field="power")
        if self.base_lr < 0 or self.min_lr < 0:
            raise InvalidConfig("learning rates must be non-negative", field="base_lr")

    def in_iterations(self, steps_per_epoch: int) -> ScheduleConfig:
        """Convert an epoch-denominated schedule to optimizer steps."""
        if self.unit == "iteration":
            return self
        return replace(self, warmup=self.warmup * steps_per_epoch, total=self.total * steps_per_epoch,
                       unit="iteration")


def pretrain_schedule(total_epochs: int = 300, warmup_epochs: int = 20, base_lr: float = 0.000125) -> ScheduleConfig:
    """Pre-training recipe: 20-epoch warmup from 1e-3 x base, then cosine."""
    return ScheduleConfig(base_lr, warmup_epochs, total_epochs, 1e-3, "cosine", unit="epoch")


def finetune_schedule(total_iters: int = 10_000, warmup_iters: int = 1500, base_lr: float = 1e-4) -> ScheduleConfig:
    """Fine-tuning recipe: 1500-iteration warmup from 1e-6 x base, then linear (power 1) decay."""
    return ScheduleConfig(base_lr, warmup_iters, total_iters, 1e-6, "poly", 1.0)


def lr_at(step: float, sched: ScheduleConfig) -> float:
    if not 0 <= step <= sched.total:
        raise InvalidConfig(f"step {step} outside [0, {sched.total}]", field="step")
    base, f, w = sched.base_lr, sched.start_factor, sched.warmup
    if step < w:
        return base * (f + (1 - f) * step / w)
    t = (step - w) / (sched.total - w)
    if sched.decay == "cosine":
        return sched.min_lr + (base - sched.min_lr) * 0.5 * (1 + math.cos(math.pi * t))
    return sched.min_lr + (base - sched.min_lr) * (1 - t) ** sched.power
