"""Adam with bias correction and decoupled weight decay, plus the warmup /
inverse-square-root learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    slots: list = field(default_factory=list)  # (m, v) per parameter, by position


def adam_step(params: list[Tensor], grads: list[np.ndarray] | None, state: AdamState) -> list[Tensor]:
    """One optimizer step: Adam update, then decoupled decay p -= lr*wd*p."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.slots:
        state.slots = [(np.zeros_like(p.data), np.zeros_like(p.data)) for p in params]
    if len(state.slots) != len(params):
        raise ShapeError(f"optimizer state holds {len(state.slots)} slots for {len(params)} params")

    state.t += 1
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    lr = np.float32(state.lr)
    eps = np.float32(state.eps)
    bc1 = np.float32(1.0 - state.beta1 ** state.t)
    bc2 = np.float32(1.0 - state.beta2 ** state.t)

    for p, g, (m, v) in zip(params, grads, state.slots):
        if g is None:
            raise UsageError("adam_step needs populated gradients; run backward first")
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if state.weight_decay:
            p.data -= lr * np.float32(state.weight_decay) * p.data
    return params


def lr_at(step: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear warmup to peak_lr, then decay by sqrt(warmup/step)."""
    if warmup_steps < 1:
        raise ConfigError(f"warmup_steps must be >= 1, got {warmup_steps}")
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    if step <= warmup_steps:
        return peak_lr * step / warmup_steps
    return peak_lr * (warmup_steps / step) ** 0.5
