"""Training losses: pixel MSE, feature (perceptual) MSE, asymmetric noise loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.init import fan_in_uniform
from .autodiff.tensor import DimensionError, Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.25
    lambda_asymm: float = 0.5
    perceptual_layer: int = 2
    asymm_reduction: str = "sum"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.lambda_asymm < 0:
            raise ValueError(f"lambda_asymm must be >= 0, got {self.lambda_asymm}")
        if self.asymm_reduction not in ("sum", "mean"):
            raise ValueError(f"asymm_reduction must be 'sum' or 'mean', got {self.asymm_reduction!r}")


class FeatureExtractor:
    """Frozen convolutional feature map with addressable stages.

    Stage 1 is conv3x3(B->8)+ReLU; every later stage is a 2x2 average pool
    followed by conv3x3+ReLU. Weights come from a fixed seed and never
    receive gradients, so any network with the same ``__call__`` contract
    (e.g. a VGG-shaped one) can be dropped in.
    """

    def __init__(self, bands: int, channels: tuple[int, ...] = (8, 16), seed: int = 1234,
                 dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.bands = bands
        self.stages = []
        cin = bands
        for cout in channels:
            w = fan_in_uniform(rng, (cout, cin, 3, 3), dtype)
            w.requires_grad = False
            b = Tensor(np.zeros(cout, dtype=dtype))
            self.stages.append((w, b))
            cin = cout

    @property
    def depth(self) -> int:
        return len(self.stages)

    def astype(self, dtype) -> "FeatureExtractor":
        for w, b in self.stages:
            w.data = w.data.astype(dtype)
            b.data = b.data.astype(dtype)
        return self

    def __call__(self, x: Tensor, stage: int) -> Tensor:
        if not 1 <= stage <= self.depth:
            raise ValueError(f"feature stage must be in 1..{self.depth}, got {stage}")
        h = x
        for i, (w, b) in enumerate(self.stages[:stage]):
            if i:
                h = ops.pool2d(h, "avg2x2")
            h = ops.relu(ops.conv2d(h, w, b))
        return h


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} vs {b.shape}")


def mse_loss(g: Tensor, d: Tensor) -> Tensor:
    """Mean of ``(G - D)^2`` over every element."""
    _same_shape(g, d, "mse_loss")
    return ops.mean(ops.square(ops.sub(g, d)))


def perceptual_loss(g: Tensor, d: Tensor, extractor: FeatureExtractor, stage: int) -> Tensor:
    _same_shape(g, d, "perceptual_loss")
    return ops.mean(ops.square(ops.sub(extractor(g, stage), extractor(d, stage))))


def asymmetric_loss(n_est: Tensor, n_true: Tensor, alpha: float = 0.25,
                    reduction: str = "sum") -> Tensor:
    """``sum_i |alpha - 1[n_i < n'_i]| * (n_i - n'_i)^2``.

    Under-estimates are weighted ``1 - alpha``, over-estimates ``alpha``. The
    weight is held constant in the backward pass. For a batched
    ``[N, B, H, W]`` input the per-sample sums are averaged over ``N``;
    ``reduction="mean"`` averages over every element instead.
    """
    _same_shape(n_est, n_true, "asymmetric_loss")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    diff = ops.sub(n_est, n_true)
    weight = np.where(diff.data < 0, 1.0 - alpha, alpha).astype(diff.dtype)
    weighted = ops.mul(ops.square(diff), weight)
    if reduction == "mean":
        return ops.mean(weighted)
    total = ops.sum(weighted)
    if n_est.ndim == 4:
        total = ops.mul(total, 1.0 / n_est.shape[0])
    return total


def total_loss(g: Tensor, d: Tensor, n_est: Tensor, n_true: Tensor, weights: LossWeights,
               extractor: FeatureExtractor) -> Tensor:
    """``L_mse + L_perceptual + lambda * L_asymm``."""
    loss = ops.add(mse_loss(g, d), perceptual_loss(g, d, extractor, weights.perceptual_layer))
    if weights.lambda_asymm:
        asym = asymmetric_loss(n_est, n_true, weights.alpha, weights.asymm_reduction)
        loss = ops.add(loss, ops.mul(asym, weights.lambda_asymm))
    return loss
