"""SGD, Adam and AdamW on dicts of numpy arrays, plus the epoch learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMIZERS = ("SGD", "Adam", "AdamW")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    kind: str
    lr: float
    weight_decay: float = 0.0
    momentum: float = 0.9
    buffers: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")


def make_optimizer(kind: str, lr: float, weight_decay: float = 0.0, momentum: float = 0.9) -> OptimizerState:
    return OptimizerState(kind, float(lr), float(weight_decay), float(momentum))


def optimizer_step(state: OptimizerState, weights: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray], lr: float | None = None) -> dict[str, np.ndarray]:
    """Update ``weights`` in place and return them.

    SGD and Adam add ``weight_decay * w`` to the gradient; AdamW instead
    shrinks the weights by ``lr * weight_decay`` before the Adam step.
    ``lr`` overrides ``state.lr`` for scheduled training.
    """
    lr = state.lr if lr is None else lr
    wd = state.weight_decay
    state.step += 1
    t = state.step
    b1, b2 = ADAM_BETAS
    for name, w in weights.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != weight shape {w.shape}")
        dt = w.dtype.type
        if state.kind == "SGD":
            if wd:
                g = g + dt(wd) * w
            v = state.buffers.get(name)
            v = g.copy() if v is None else v * dt(state.momentum) + g
            state.buffers[name] = v
            w -= dt(lr) * v
            continue
        if state.kind == "AdamW" and wd:
            w -= dt(lr * wd) * w
        elif state.kind == "Adam" and wd:
            g = g + dt(wd) * w
        m, v = state.buffers.get(name, (None, None))
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m *= dt(b1)
        m += dt(1 - b1) * g
        v *= dt(b2)
        v += dt(1 - b2) * (g * g)
        state.buffers[name] = (m, v)
        m_hat = m / dt(1 - b1 ** t)
        v_hat = v / dt(1 - b2 ** t)
        w -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(ADAM_EPS))
    return weights


def lr_schedule(budget, base_lr: float, epoch: int) -> float:
    """Linear warm-up to ``base_lr`` over the warm-up epochs, then constant,
    halved at each of the budget's halving epochs (counting from that epoch)."""
    if epoch < 1:
        raise ValueError("epochs count from 1")
    lr = base_lr * min(1.0, epoch / budget.warmup_epochs) if budget.warmup_epochs > 0 else base_lr
    for h in budget.halving_epochs:
        if epoch >= h:
            lr *= 0.5
    return lr
