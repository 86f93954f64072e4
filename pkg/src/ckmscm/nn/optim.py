"""Adam and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalFault


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, applied to ``params`` and ``state`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalFault("non-finite gradient", name)
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr != 0.0:
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without strict improvement.

    The patience counter resets on every improvement and after each decay.
    """

    def __init__(self, lr_initial: float, patience: int = 5, factor: float = 0.5):
        if not lr_initial >= 0:
            raise ValueError("lr_initial must be >= 0")
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        self.lr = float(lr_initial)
        self.patience = int(patience)
        self.factor = float(factor)
        self.best = float("inf")
        self.bad_epochs = 0
        self.history: list[float] = []

    def step(self, loss: float) -> float:
        self.history.append(float(loss))
        if loss < self.best:
            self.best = float(loss)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def plateau_lr(losses, lr_initial: float, patience: int = 5, factor: float = 0.5) -> float:
    """Learning rate after replaying a whole history of epoch losses."""
    sched = PlateauScheduler(lr_initial, patience, factor)
    for loss in losses:
        sched.step(loss)
    return sched.lr
