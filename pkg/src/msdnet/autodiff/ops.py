"""Differentiable operators.

Spatial operators accept ``[C, H, W]`` or batched ``[N, C, H, W]`` inputs; the
channel axis is always ``ndim - 3``.
"""
from __future__ import annotations

import contextlib
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import DimensionError, Tensor, active_tape

# op name -> relative perturbation applied to that op's input gradient;
# only used by the verification harness to prove it can fail
_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def inject_fault(op: str, scale: float = 1e-2):
    _FAULTS[op] = scale
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], rule) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.wrap(data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(op, inputs, out, rule)
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _result("add", a.data + b, (a,), lambda g: (g,))
    a = as_tensor(a)
    if a.shape != b.shape:
        raise DimensionError(f"add: shape {a.shape} vs {b.shape}")
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _result("sub", a.data - b, (a,), lambda g: (g,))
    a = as_tensor(a)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shape {a.shape} vs {b.shape}")
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar or a same-shape tensor/array."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = b if np.isscalar(b) else np.asarray(b, dtype=a.dtype)
        if not np.isscalar(c) and c.shape != a.shape:
            raise DimensionError(f"mul: shape {a.shape} vs {c.shape}")
        return _result("mul", a.data * c, (a,), lambda g: (g * c,))
    if a.shape != b.shape:
        raise DimensionError(f"mul: shape {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _result("square", xd * xd, (x,), lambda g: (2.0 * xd * g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0).astype(x.dtype, copy=False),
                   (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- reductions

def sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _result("sum", np.asarray(x.data.sum(), dtype=x.dtype).reshape(()), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _result("mean", np.asarray(x.data.sum() / n, dtype=x.dtype).reshape(()), (x,),
                   lambda g: (np.full(shape, g / n, dtype=x.dtype),))


# ---------------------------------------------------------------- convolution

def _check_spatial(x: Tensor, op: str) -> None:
    if x.ndim not in (3, 4):
        raise DimensionError(f"{op}: expected [C,H,W] or [N,C,H,W], got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding."""
    _check_spatial(x, "conv2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be [Cout,Cin,k,k], got {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel axis must be square and odd, got {kh}x{kw}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    if padding not in ("same", "valid"):
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if c != cin:
        raise DimensionError(f"conv2d: input channel axis has {c}, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias axis 0 has {bias.shape}, expected ({cout},)")
    k = kh
    p = (k - 1) // 2 if padding == "same" else 0
    if h + 2 * p < k or w + 2 * p < k:
        raise DimensionError(f"conv2d: spatial axes {h}x{w} smaller than kernel {k}")
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    ho = (h + 2 * p - k) // stride + 1
    wo = (w + 2 * p - k) // stride + 1

    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out if batched else out[0])

    def rule(g):
        g4 = g if batched else g[None]
        g2 = g4.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = (g2.T @ cols).reshape(weight.shape)
        db = g2.sum(axis=0) if bias is not None else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[..., i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
            if "conv2d" in _FAULTS:
                dx = dx * (1.0 + _FAULTS["conv2d"])
            if not batched:
                dx = dx[0]
        return (dx, dw) if bias is None else (dx, dw, db)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result("conv2d", out, inputs, rule)


# ---------------------------------------------------------------- pooling

def _max2x2(x: Tensor) -> Tensor:
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"pool2d(max2x2): spatial axes must be even, got H={h}, W={w}")
    h2, w2 = h // 2, w // 2
    win = x.data.reshape(*lead, h2, 2, w2, 2).swapaxes(-3, -2).reshape(*lead, h2, w2, 4)
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def rule(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (gw.reshape(*lead, h2, w2, 2, 2).swapaxes(-3, -2).reshape(x.shape),)

    return _result("max2x2", out, (x,), rule)


def _avg2x2(x: Tensor) -> Tensor:
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"pool2d(avg2x2): spatial axes must be even, got H={h}, W={w}")
    out = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def rule(g):
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25,)

    return _result("avg2x2", out, (x,), rule)


def _global_max(x: Tensor) -> Tensor:
    *lead, h, w = x.shape
    flat = x.data.reshape(*lead, h * w)
    idx = flat.argmax(axis=-1)[..., None]
    out = np.take_along_axis(flat, idx, axis=-1).reshape(*lead, 1, 1)

    def rule(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx, g.reshape(*lead, 1), axis=-1)
        return (gf.reshape(x.shape),)

    return _result("global_max", out, (x,), rule)


def adaptive_bounds(size: int, bins: int) -> list[tuple[int, int]]:
    """Start/stop of each adaptive pooling cell: [floor(i*n/b), ceil((i+1)*n/b))."""
    return [(i * size // bins, -(-(i + 1) * size // bins)) for i in range(bins)]


def _adaptive_avg(x: Tensor, bins: int) -> Tensor:
    *lead, h, w = x.shape
    if bins < 1 or bins > min(h, w):
        raise DimensionError(f"pool2d(adaptive_avg): bins={bins} exceeds spatial axes {h}x{w}")
    rows, cols = adaptive_bounds(h, bins), adaptive_bounds(w, bins)
    out = np.empty((*lead, bins, bins), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[..., i, j] = x.data[..., r0:r1, c0:c1].mean(axis=(-2, -1))

    def rule(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                gx[..., r0:r1, c0:c1] += (g[..., i, j] / ((r1 - r0) * (c1 - c0)))[..., None, None]
        return (gx,)

    return _result("adaptive_avg", out, (x,), rule)


def pool2d(x: Tensor, mode: str, bins: Optional[int] = None) -> Tensor:
    """Pool over the last two axes.

    ``mode`` is one of ``max2x2``, ``avg2x2``, ``global_max`` or
    ``adaptive_avg`` (which needs ``bins``). Max pooling sends the gradient to
    the first row-major argmax of each window.
    """
    if x.ndim < 2:
        raise DimensionError(f"pool2d: need at least 2 axes, got shape {x.shape}")
    if mode == "max2x2":
        return _max2x2(x)
    if mode == "avg2x2":
        return _avg2x2(x)
    if mode == "global_max":
        return _global_max(x)
    if mode == "adaptive_avg":
        if bins is None:
            raise ValueError("pool2d(adaptive_avg) needs bins")
        return _adaptive_avg(x, bins)
    raise ValueError(f"pool2d: unknown mode {mode!r}")


def resize_nearest(x: Tensor, factor: Optional[int] = None,
                   size: Optional[tuple[int, int]] = None) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes.

    Give either an integer ``factor`` or a target ``size`` no smaller than the
    input; output pixel ``(r, c)`` copies input ``(r*H//Ho, c*W//Wo)``.
    """
    *lead, h, w = x.shape
    if factor is not None:
        if factor < 1:
            raise ValueError(f"resize_nearest: factor must be >= 1, got {factor}")
        ho, wo = h * factor, w * factor
    elif size is not None:
        ho, wo = size
        if ho < h or wo < w:
            raise DimensionError(f"resize_nearest: target {ho}x{wo} smaller than input {h}x{w}")
    else:
        raise ValueError("resize_nearest needs factor or size")
    ri = np.arange(ho) * h // ho
    ci = np.arange(wo) * w // wo
    out = x.data[..., ri[:, None], ci[None, :]]
    rstart = np.searchsorted(ri, np.arange(h))
    cstart = np.searchsorted(ci, np.arange(w))

    def rule(g):
        gr = np.add.reduceat(g, rstart, axis=-2)
        return (np.add.reduceat(gr, cstart, axis=-1),)

    return _result("resize_nearest", out, (x,), rule)


# ---------------------------------------------------------------- channel plumbing

def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_channels: no parts")
    ref = parts[0]
    _check_spatial(ref, "concat_channels")
    axis = ref.ndim - 3
    for p in parts[1:]:
        if p.ndim != ref.ndim or p.shape[:axis] != ref.shape[:axis]:
            raise DimensionError(f"concat_channels: batch axis mismatch {p.shape} vs {ref.shape}")
        if p.shape[axis + 1:] != ref.shape[axis + 1:]:
            raise DimensionError(
                f"concat_channels: spatial axes {p.shape[axis + 1:]} vs {ref.shape[axis + 1:]}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat_channels", out, tuple(parts), rule)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_spatial(x, "slice_channels")
    axis = x.ndim - 3
    index = (slice(None),) * axis + (slice(start, stop),)
    out = x.data[index].copy()

    def rule(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _result("slice_channels", out, (x,), rule)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``y = W x + b`` over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"fully_connected: input axis -1 has {x.shape[-1]}, weight is {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"fully_connected: bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def rule(g):
        g2 = g.reshape(-1, wd.shape[0])
        x2 = xd.reshape(-1, wd.shape[1])
        return g @ wd, g2.T @ x2, g2.sum(axis=0)

    return _result("fully_connected", out, (x, weight, bias), rule)


def channel_scale(p: Tensor, s: Tensor) -> Tensor:
    """Multiply channel ``i`` of ``p`` ([..., C, H, W]) by ``s[..., i]``."""
    if p.ndim < 3 or s.shape != p.shape[:-2]:
        raise DimensionError(f"channel_scale: weights {s.shape} do not match channels of {p.shape}")
    pd, sd = p.data, s.data
    out = pd * sd[..., None, None]

    def rule(g):
        return g * sd[..., None, None], (g * pd).sum(axis=(-2, -1))

    return _result("channel_scale", out, (p, s), rule)
