"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`msdnet.autodiff.ops`
record themselves on the innermost active :class:`Tape`; with no tape active
nothing is recorded, which is how inference runs.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = ops.sum(ops.mul(x, x))
    >>> backward(tape, loss)
    >>> x.grad
    array([2., 4.])
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class ContractError(RuntimeError):
    """Raised when an operation is used outside its contract (e.g. non-scalar loss)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        # (weak ref to the recording tape, record index); weak so that graphs
        # are freed by refcounting as soon as the tape goes away
        self.node: Optional[tuple[weakref.ref, int]] = None
        self.name = name

    @classmethod
    def wrap(cls, data: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Build a tensor around ``data`` without copying."""
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = requires_grad
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        tape = self.node[0]() if self.node is not None else None
        if tape is None:
            raise ContractError("tensor was not produced on a live tape")
        backward(tape, self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; the ops module does the work
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


@dataclass
class Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are appended in execution order, so the list is
    topologically sorted by construction.
    """

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs, output: Tensor, rule) -> None:
        output.node = (weakref.ref(self), len(self.records))
        self.records.append(Record(tuple(inputs), output, rule, op))


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` arrays, so call
    :meth:`Tensor.zero_grad` between independent passes.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None or loss.node[0]() is not tape:
        raise ContractError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records[: loss.node[1] + 1]):
        g = grads.get(id(rec.output))
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                seen[key] = t

    for key, t in seen.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g
