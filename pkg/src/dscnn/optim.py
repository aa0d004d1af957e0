"""SGD with momentum, L2 weight decay and a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, SpecError
from .tensor import Tensor


@dataclass(frozen=True)
class Schedule:
    """``constant`` or ``step``: lr0 * gamma ** (step // period)."""

    kind: str = "step"
    gamma: float = 0.5
    period: int = 2000

    def __post_init__(self):
        if self.kind not in ("constant", "step"):
            raise SpecError(f"unknown schedule {self.kind!r}")
        if self.kind == "step" and (self.period < 1 or not 0 < self.gamma <= 1):
            raise SpecError("step schedule needs period >= 1 and 0 < gamma <= 1")


def lr_at(step: int, lr0: float, schedule: Schedule) -> float:
    if step < 0:
        raise SpecError(f"step must be >= 0, got {step}")
    if schedule.kind == "constant":
        return lr0
    return lr0 * schedule.gamma ** (step // schedule.period)


@dataclass
class SgdState:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Schedule = field(default_factory=Schedule)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise SpecError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise SpecError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise SpecError(f"weight decay must be >= 0, got {self.weight_decay}")

    def current_lr(self) -> float:
        return lr_at(self.step, self.lr, self.schedule)


def sgd_step(params: Mapping[str, Tensor], state: SgdState):
    """One update ``v <- mu v - lr (g + wd theta); theta <- theta + v``.

    Parameters and velocities are updated in place; gradients are left alone.
    """
    lr = state.current_lr()
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    for name, p in params.items():
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = (state.momentum * v - lr * g).astype(p.dtype)
        state.velocity[name] = v
        p.data = p.data + v
    state.step += 1
    return params, state
