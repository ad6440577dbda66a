"""Self-check harness behind ``msdnet verify``.

Two suites. ``grads`` compares taped gradients with central finite
differences for every differentiable op on small seeded shapes and for the
whole estimator -> denoiser -> loss composite. ``oracles`` compares the fast
implementations with slow brute-force versions. Every check reports a value
and the threshold it must stay below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .autodiff import Tensor, gradient_check, ops
from .losses import FeatureExtractor, LossWeights, asymmetric_loss, mse_loss, perceptual_loss, total_loss
from .metrics import ssim_band

GRAD_TOL = 1e-4
DIFFERENTIABLE_OPS = (
    "add", "sub", "mul", "square", "relu", "sigmoid", "reshape", "sum", "mean", "conv2d",
    "pool2d", "resize_nearest", "concat_channels", "slice_channels", "fully_connected",
    "channel_scale",
)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value)) and self.value < self.threshold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<44} {self.value:12.3e} < {self.threshold:.0e}  {status}"


# ---------------------------------------------------------------- gradient suite

def _away_from_zero(rng, shape, lo=0.1):
    """Uniform values with |x| >= lo, so kinks of relu/max sit far from the probes."""
    return rng.uniform(lo, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def _scalarise(out: Tensor, probe: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, probe))


def _op_cases(rng) -> Iterator[tuple[str, Callable, list]]:
    """Yield (label, function, inputs) gradient cases; each label starts with the op name."""

    def probed(fn):
        probe = {}

        def f(*xs):
            out = fn(*xs)
            if out.size == 1:
                return out
            key = out.shape
            if key not in probe:
                probe[key] = rng.normal(size=key)
            return _scalarise(out, probe[key])
        return f

    for shape in ((3,), (2, 4, 3)):
        a, b = _t(rng.normal(size=shape)), _t(rng.normal(size=shape))
        yield f"add{shape}", probed(ops.add), [a, b]
        yield f"sub{shape}", probed(ops.sub), [_t(a.data), _t(b.data)]
        yield f"mul{shape}", probed(ops.mul), [_t(a.data), _t(b.data)]
        yield f"square{shape}", probed(ops.square), [_t(a.data)]
        yield f"relu{shape}", probed(ops.relu), [_t(_away_from_zero(rng, shape))]
        yield f"sigmoid{shape}", probed(ops.sigmoid), [_t(a.data * 3)]
        yield f"sum{shape}", ops.sum, [_t(a.data)]
        yield f"mean{shape}", ops.mean, [_t(a.data)]
    yield "reshape(2,6)->(3,4)", probed(lambda x: ops.reshape(x, (3, 4))), [_t(rng.normal(size=(2, 6)))]

    for cin, cout, k, hw, stride, batch in ((1, 2, 3, (5, 4), 1, None), (3, 2, 5, (6, 6), 1, 2),
                                            (2, 3, 7, (7, 8), 1, None), (2, 2, 3, (7, 7), 2, None)):
        shape = (cin, *hw) if batch is None else (batch, cin, *hw)
        x = _t(rng.normal(size=shape))
        w = _t(rng.normal(size=(cout, cin, k, k)) * 0.3)
        b = _t(rng.normal(size=cout))
        yield (f"conv2d(k={k},s={stride},x{shape})",
               probed(lambda x_, w_, b_, s=stride: ops.conv2d(x_, w_, b_, stride=s)), [x, w, b])
    x = _t(rng.normal(size=(2, 5, 5)))
    yield "conv2d(valid)", probed(lambda x_, w_: ops.conv2d(x_, w_, padding="valid")), \
        [x, _t(rng.normal(size=(1, 2, 3, 3)))]

    for mode, shape, bins in (("max2x2", (2, 4, 6), None), ("max2x2", (2, 1, 4, 4), None),
                              ("avg2x2", (3, 4, 4), None), ("global_max", (3, 5, 4), None),
                              ("adaptive_avg", (2, 7, 5), 3), ("adaptive_avg", (2, 6, 6), 2)):
        x = _t(rng.permutation(np.arange(math.prod(shape), dtype=np.float64)).reshape(shape) * 0.1)
        yield (f"pool2d({mode},{shape})",
               probed(lambda x_, m=mode, bn=bins: ops.pool2d(x_, m, bins=bn)), [x])

    yield "resize_nearest(factor=2)", probed(lambda x_: ops.resize_nearest(x_, factor=2)), \
        [_t(rng.normal(size=(2, 3, 3)))]
    yield "resize_nearest(size=7x5)", probed(lambda x_: ops.resize_nearest(x_, size=(7, 5))), \
        [_t(rng.normal(size=(2, 3, 2)))]

    parts = [_t(rng.normal(size=(c, 3, 3))) for c in (1, 2, 3)]
    yield "concat_channels(1+2+3)", probed(lambda *ps: ops.concat_channels(list(ps))), parts
    yield "slice_channels(1:3)", probed(lambda x_: ops.slice_channels(x_, 1, 3)), \
        [_t(rng.normal(size=(2, 4, 3, 3)))]
    yield "fully_connected(5->3)", probed(ops.fully_connected), \
        [_t(rng.normal(size=5)), _t(rng.normal(size=(3, 5))), _t(rng.normal(size=3))]
    yield "fully_connected(batch 2)", probed(ops.fully_connected), \
        [_t(rng.normal(size=(2, 4))), _t(rng.normal(size=(3, 4))), _t(rng.normal(size=3))]
    yield "channel_scale", probed(ops.channel_scale), \
        [_t(rng.normal(size=(3, 4, 4))), _t(rng.uniform(0.1, 1, size=3))]


def _composite_check(seed: int) -> float:
    from .model import ModelConfig, init_model

    rng = np.random.default_rng(seed)
    model = init_model(ModelConfig(bands=1, base_channels=4, blocks_per_module=2,
                                   unet_widths=(4, 8, 16)), seed=seed)
    for name, p in model.parameters().items():
        if name.endswith(".b"):
            p.data[:] = rng.normal(scale=0.05, size=p.shape)
    params = list(model.parameters().values())
    clean = rng.uniform(0.1, 0.9, size=(1, 8, 8))
    noisy = _t(clean + rng.normal(scale=0.1, size=clean.shape))
    truth = _t(np.full(clean.shape, 0.1))
    extractor = FeatureExtractor(1, seed=seed)
    weights = LossWeights()
    g = _t(clean)

    def f(*_params):
        # gradient_check perturbs the parameter tensors in place, so the model sees them
        d, sigma = model(noisy)
        return total_loss(g, d, sigma, truth, weights, extractor)

    return gradient_check(f, params, eps=1e-6, max_elements=2, seed=seed)


def grads_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = [Check(f"grad {label}", gradient_check(fn, inputs, eps=1e-6), GRAD_TOL)
              for label, fn, inputs in _op_cases(rng)]
    for s in (seed, seed + 1):
        checks.append(Check(f"grad composite estimator+unet+loss (seed {s})", _composite_check(s), GRAD_TOL))
    covered = {c.name.split()[1].split("(")[0] for c in checks if c.name.startswith("grad ")}
    missing = [op for op in DIFFERENTIABLE_OPS if op not in covered]
    checks.append(Check("grad coverage: ops without a check", float(len(missing)), 0.5))
    return checks


# ---------------------------------------------------------------- oracle suite

def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    out = np.zeros((cout, h + 2 * pad - k + 1, wd + 2 * pad - k + 1))
    for o in range(cout):
        for r in range(out.shape[1]):
            for c in range(out.shape[2]):
                out[o, r, c] = b[o] + sum(w[o, i, u, v] * xp[i, r + u, c + v]
                                          for i in range(cin) for u in range(k) for v in range(k))
    return out


def naive_ssim(x: np.ndarray, y: np.ndarray, k: int = 11, sigma: float = 1.5) -> float:
    ax = np.arange(k) - (k - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for r in range(x.shape[0] - k + 1):
        for c in range(x.shape[1] - k + 1):
            px, py = x[r:r + k, c:c + k], y[r:r + k, c:c + k]
            mx, my = (win * px).sum(), (win * py).sum()
            vx, vy = (win * (px - mx) ** 2).sum(), (win * (py - my) ** 2).sum()
            cxy = (win * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def scalar_adam_trace(w0, grad, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0) -> list[float]:
    w, m, v, trace = w0, 0.0, 0.0, [w0]
    for t in range(1, steps + 1):
        g = grad(w) + wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(w)
    return trace


def _adam_check() -> float:
    from .config import TrainConfig
    from .training import AdamState, adam_step

    worst = 0.0
    for wd in (0.0, 5e-4):
        cfg = TrainConfig(learning_rate=0.05, weight_decay=wd)
        p = {"w": Tensor(np.array([1.0]))}
        state = AdamState.zeros_like(p)
        mine = [1.0]
        for _ in range(3):
            adam_step(p, {"w": 2 * p["w"].data}, state, cfg)
            mine.append(float(p["w"].data[0]))
        ref = scalar_adam_trace(1.0, lambda w: 2 * w, 3, 0.05, wd=wd)
        worst = max(worst, max(abs(a - b) for a, b in zip(mine, ref)))
    return worst


def _loss_checks(rng) -> list[Check]:
    g, d = rng.uniform(size=(2, 8, 8)), rng.uniform(size=(2, 8, 8))
    n, t = rng.uniform(size=(2, 8, 8)), rng.uniform(size=(2, 8, 8))
    mse_direct = sum((a - b) ** 2 for a, b in zip(g.ravel(), d.ravel())) / g.size
    asym_direct = sum(abs(0.25 - (1.0 if a < b else 0.0)) * (a - b) ** 2 for a, b in zip(n.ravel(), t.ravel()))

    ext = FeatureExtractor(2, seed=7)

    def feats(x):
        h = x
        for i, (w, b) in enumerate(ext.stages):
            if i:
                c, hh, ww = h.shape
                h = h.reshape(c, hh // 2, 2, ww // 2, 2).mean(axis=(2, 4))
            h = np.maximum(naive_conv2d(h, w.data, b.data, 1), 0)
        return h

    fg, fd = feats(g), feats(d)
    perc_direct = float(((fg - fd) ** 2).sum() / fg.size)
    total_direct = mse_direct + perc_direct + 0.5 * asym_direct
    tg, td, tn, tt = _t(g), _t(d), _t(n), _t(t)
    return [
        Check("oracle mse_loss vs direct sum", abs(mse_loss(tg, td).item() - mse_direct), 1e-10),
        Check("oracle perceptual_loss vs direct features",
              abs(perceptual_loss(tg, td, ext, 2).item() - perc_direct), 1e-10),
        Check("oracle asymmetric_loss vs direct sum", abs(asymmetric_loss(tn, tt).item() - asym_direct), 1e-10),
        Check("oracle total_loss vs term sum",
              abs(total_loss(tg, td, tn, tt, LossWeights(), ext).item() - total_direct), 1e-10),
    ]


def oracles_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    for cin, cout, k, h, w in ((1, 1, 3, 5, 5), (2, 3, 3, 6, 4), (3, 2, 5, 7, 6), (2, 2, 7, 8, 8)):
        x, wt, b = rng.normal(size=(cin, h, w)), rng.normal(size=(cout, cin, k, k)), rng.normal(size=cout)
        fast = ops.conv2d(_t(x), _t(wt), _t(b)).data
        err = float(np.max(np.abs(fast - naive_conv2d(x, wt, b, (k - 1) // 2))))
        checks.append(Check(f"oracle conv2d k={k} {cin}->{cout} {h}x{w}", err, 1e-6))
    for h, w in ((11, 11), (16, 13)):
        x = rng.uniform(size=(h, w))
        y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
        checks.append(Check(f"oracle ssim {h}x{w}", abs(ssim_band(x, y) - naive_ssim(x, y)), 1e-6))
    checks.append(Check("oracle adam vs scalar trace", _adam_check(), 1e-10))
    checks.extend(_loss_checks(rng))
    return checks


SUITES = {"grads": grads_suite, "oracles": oracles_suite}


def run_suites(which: str = "all", seed: int = 0) -> list[Check]:
    names = list(SUITES) if which == "all" else [which]
    checks: list[Check] = []
    for name in names:
        checks.extend(SUITES[name](seed))
    return checks
