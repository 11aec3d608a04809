"""Adam with decoupled weight decay, and the polynomial LR schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: dict, state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place update over ``params`` (name -> Tensor with .grad).

    Weight decay is decoupled: lr * wd * param is subtracted alongside the
    moment update rather than folded into the gradient.
    """
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"no gradient for parameter {name!r}")
        if g.shape != p.data.shape or state.m[name].shape != p.data.shape:
            raise ValueError(f"shape mismatch updating {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)


def poly_lr(step: int, max_steps: int, base_lr: float, power: float = 0.9) -> float:
    """base_lr * (1 - step / max_steps) ** power."""
    if not 0 <= step <= max_steps:
        raise ValueError(f"step {step} outside [0, {max_steps}]")
    return float(base_lr * (1.0 - step / max_steps) ** power)
