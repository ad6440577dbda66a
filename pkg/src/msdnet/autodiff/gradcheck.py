"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def gradient_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                   max_elements: Optional[int] = None, seed: int = 0) -> float:
    """Largest relative error between taped and finite-difference gradients.

    The error of one element is ``|a - n| / max(|a|, |n|, 1e-8)``. When
    ``max_elements`` is set, at most that many entries of each input are
    probed, chosen with a seeded generator; every input is always probed.
    Inputs must be 64-bit.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        out = f(*inputs)
    backward(tape, out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        af = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*inputs).data)
            flat[i] = orig - eps
            fm = float(f(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(af[i] - num) / max(abs(af[i]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
