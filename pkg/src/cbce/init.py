"""Parameter initializers. All return trainable tensors."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def he(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Tensor:
    """Fan-in scaled init; keeps activation variance through ReLU stacks."""
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def uniform(rng: np.random.Generator, shape, bound: float, dtype=np.float64) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def constant(shape, value: float, dtype=np.float64) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)
