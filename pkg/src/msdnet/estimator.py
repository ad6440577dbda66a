"""Noise estimation subnetwork.

Pipeline on a ``[B, H, W]`` (or batched ``[N, B, H, W]``) noisy input:

    stem 3x3 conv + ReLU -> C feature maps
    f1, f2, f3 = multiscale modules with 3x3, 5x5, 7x7 kernels
    f4         = pyramid pooling over bins (1, 2, 3, 6)
    P          = concat[f1, f2, f3, f4]                 (4C channels)
    A          = channel attention on P (global max -> FC -> ReLU -> FC -> sigmoid)
    sigma_hat  = ReLU(1x1 conv A -> B)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.init import fan_in_uniform, zeros
from .autodiff.tensor import DimensionError, Tensor


@dataclass(frozen=True)
class EstimatorConfig:
    bands: int = 1
    base_channels: int = 16
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    blocks_per_module: int = 6
    block_growth: Optional[int] = None
    pyramid_bins: tuple[int, ...] = (1, 2, 3, 6)
    attention_reduction: int = 4

    def __post_init__(self):
        for name in ("bands", "base_channels", "blocks_per_module", "attention_reduction"):
            if getattr(self, name) < 1:
                raise ValueError(f"EstimatorConfig.{name} must be >= 1")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd and positive, got {self.kernel_sizes}")
        if self.block_growth is not None and self.block_growth < 1:
            raise ValueError("block_growth must be >= 1")
        if not self.pyramid_bins or min(self.pyramid_bins) < 1:
            raise ValueError(f"pyramid bins must be positive, got {self.pyramid_bins}")
        if self.base_channels % len(self.pyramid_bins):
            raise ValueError(
                f"base_channels={self.base_channels} must split evenly over "
                f"{len(self.pyramid_bins)} pyramid branches")

    @property
    def growth(self) -> int:
        return self.block_growth if self.block_growth is not None else max(1, self.base_channels // 4)

    @property
    def streams(self) -> int:
        return len(self.kernel_sizes) + 1

    @property
    def fused_channels(self) -> int:
        return self.streams * self.base_channels

    @property
    def attention_hidden(self) -> int:
        return max(1, self.fused_channels // self.attention_reduction)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Name -> shape of every learnable tensor."""
        c, g, b = self.base_channels, self.growth, self.bands
        s: dict[str, tuple[int, ...]] = {"stem.w": (c, b, 3, 3), "stem.b": (c,)}
        for i, k in enumerate(self.kernel_sizes, start=1):
            for j in range(1, self.blocks_per_module + 1):
                s[f"ms{i}.block{j}.w"] = (g, c if j == 1 else g, k, k)
                s[f"ms{i}.block{j}.b"] = (g,)
            s[f"ms{i}.proj.w"] = (c, self.blocks_per_module * g, 1, 1)
            s[f"ms{i}.proj.b"] = (c,)
        branch = c // len(self.pyramid_bins)
        for bins in self.pyramid_bins:
            s[f"pyr{bins}.w"] = (branch, c, 1, 1)
            s[f"pyr{bins}.b"] = (branch,)
        f, hid = self.fused_channels, self.attention_hidden
        s["att.fc1.w"], s["att.fc1.b"] = (hid, f), (hid,)
        s["att.fc2.w"], s["att.fc2.b"] = (f, hid), (f,)
        s["out.w"], s["out.b"] = (b, f, 1, 1), (b,)
        return s


@dataclass
class EstimatorParams:
    config: EstimatorConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def init_estimator(config: EstimatorConfig, rng: np.random.Generator,
                   dtype=np.float64) -> EstimatorParams:
    tensors = {}
    for name, shape in config.shapes().items():
        if name.endswith(".b"):
            tensors[name] = zeros(shape, dtype)
        else:
            tensors[name] = fan_in_uniform(rng, shape, dtype)
    return EstimatorParams(config, tensors)


def _conv(x: Tensor, params: EstimatorParams, prefix: str) -> Tensor:
    return ops.conv2d(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def _channels(x: Tensor) -> int:
    return x.shape[x.ndim - 3]


def multiscale_forward(x: Tensor, module_index: int, params: EstimatorParams) -> Tensor:
    """Multiscale module ``module_index`` (1-based): chained conv+ReLU blocks,
    all block outputs concatenated, then a linear 1x1 projection back to C."""
    cfg = params.config
    if not 1 <= module_index <= len(cfg.kernel_sizes):
        raise ValueError(f"module index must be in 1..{len(cfg.kernel_sizes)}, got {module_index}")
    if _channels(x) != cfg.base_channels:
        raise DimensionError(
            f"multiscale_forward: channel axis has {_channels(x)}, expected {cfg.base_channels}")
    outs = []
    h = x
    for j in range(1, cfg.blocks_per_module + 1):
        h = ops.relu(_conv(h, params, f"ms{module_index}.block{j}"))
        outs.append(h)
    return _conv(ops.concat_channels(outs), params, f"ms{module_index}.proj")


def pyramid_forward(x: Tensor, params: EstimatorParams) -> Tensor:
    cfg = params.config
    h, w = x.shape[-2:]
    if max(cfg.pyramid_bins) > min(h, w):
        raise DimensionError(
            f"pyramid_forward: bin {max(cfg.pyramid_bins)} exceeds spatial dims {h}x{w}")
    branches = []
    for bins in cfg.pyramid_bins:
        pooled = ops.pool2d(x, "adaptive_avg", bins=bins)
        proj = _conv(pooled, params, f"pyr{bins}")
        branches.append(ops.resize_nearest(proj, size=(h, w)))
    return ops.concat_channels(branches)


def channel_attention(p: Tensor, params: EstimatorParams) -> Tensor:
    cfg = params.config
    if _channels(p) != cfg.fused_channels:
        raise DimensionError(
            f"channel_attention: channel axis has {_channels(p)}, expected {cfg.fused_channels}")
    v = ops.pool2d(p, "global_max")
    v = ops.reshape(v, v.shape[:-2])
    hidden = ops.relu(ops.fully_connected(v, params["att.fc1.w"], params["att.fc1.b"]))
    s = ops.sigmoid(ops.fully_connected(hidden, params["att.fc2.w"], params["att.fc2.b"]))
    return ops.channel_scale(p, s)


def estimate_noise(y: Tensor, params: EstimatorParams) -> Tensor:
    """Nonnegative per-band, per-pixel noise level estimate with the shape of ``y``."""
    cfg = params.config
    if y.ndim not in (3, 4):
        raise DimensionError(f"estimate_noise: expected [B,H,W] or [N,B,H,W], got {y.shape}")
    if _channels(y) != cfg.bands:
        raise DimensionError(f"estimate_noise: band axis has {_channels(y)}, model expects {cfg.bands}")
    h, w = y.shape[-2:]
    need = max(8, max(cfg.pyramid_bins))
    if h < need or w < need:
        raise DimensionError(f"estimate_noise: spatial dims {h}x{w} below minimum {need}")
    stem = ops.relu(_conv(y, params, "stem"))
    streams = [multiscale_forward(stem, i, params) for i in range(1, len(cfg.kernel_sizes) + 1)]
    streams.append(pyramid_forward(stem, params))
    fused = ops.concat_channels(streams)
    attended = channel_attention(fused, params)
    return ops.relu(_conv(attended, params, "out"))
