"""Parameter initialisation."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float64) -> Tensor:
    """Weights drawn from U(-sqrt(6/fan_in), +sqrt(6/fan_in)); fan_in = prod(shape[1:])."""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape: tuple[int, ...], dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
