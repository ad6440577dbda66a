"""Residual UNet denoiser.

Sixteen 3x3 convolutions over two resolution levels::

    enc1: 2 @ w1 | pool | enc2: 2 @ w2 | pool | bottleneck: 4 @ w3
    up + 1 @ w2 | cat enc2 | dec2: 2 @ w2
    up + 1 @ w1 | cat enc1 | dec1: 2 @ w1 | head: 1 @ w1 | out: 1 @ B (linear)

The input is ``concat[Y, sigma_hat]`` and the output is the residual added
to ``Y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.init import fan_in_uniform, zeros
from .autodiff.tensor import DimensionError, Tensor

DEFAULT_WIDTHS = (64, 128, 256)


@dataclass(frozen=True)
class UNetConfig:
    bands: int = 1
    widths: tuple[int, int, int] = DEFAULT_WIDTHS

    def __post_init__(self):
        if self.bands < 1 or len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"bad UNet config: bands={self.bands}, widths={self.widths}")

    def layers(self) -> list[tuple[str, int, int]]:
        """(name, in_channels, out_channels) of the 16 convolutions in order."""
        b = self.bands
        w1, w2, w3 = self.widths
        return [
            ("enc1a", 2 * b, w1), ("enc1b", w1, w1),
            ("enc2a", w1, w2), ("enc2b", w2, w2),
            ("bot1", w2, w3), ("bot2", w3, w3), ("bot3", w3, w3), ("bot4", w3, w3),
            ("up2", w3, w2), ("dec2a", 2 * w2, w2), ("dec2b", w2, w2),
            ("up1", w2, w1), ("dec1a", 2 * w1, w1), ("dec1b", w1, w1),
            ("head", w1, w1), ("out", w1, b),
        ]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        s = {}
        for name, cin, cout in self.layers():
            s[f"{name}.w"] = (cout, cin, 3, 3)
            s[f"{name}.b"] = (cout,)
        return s


@dataclass
class UNetParams:
    config: UNetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def init_unet(config: UNetConfig, rng: np.random.Generator, dtype=np.float64) -> UNetParams:
    tensors = {}
    for name, shape in config.shapes().items():
        tensors[name] = zeros(shape, dtype) if name.endswith(".b") else fan_in_uniform(rng, shape, dtype)
    return UNetParams(config, tensors)


def _cr(x: Tensor, params: UNetParams, name: str, act: bool = True) -> Tensor:
    y = ops.conv2d(x, params[f"{name}.w"], params[f"{name}.b"])
    return ops.relu(y) if act else y


def unet_forward(y: Tensor, sigma_hat: Tensor, params: UNetParams) -> Tensor:
    """Residual predicted from the noisy image and the noise estimate."""
    if y.shape != sigma_hat.shape:
        raise DimensionError(f"unet_forward: image {y.shape} vs noise estimate {sigma_hat.shape}")
    if y.ndim not in (3, 4):
        raise DimensionError(f"unet_forward: expected [B,H,W] or [N,B,H,W], got {y.shape}")
    bands = y.shape[y.ndim - 3]
    if bands != params.config.bands:
        raise DimensionError(f"unet_forward: band axis has {bands}, model expects {params.config.bands}")
    h, w = y.shape[-2:]
    if h % 4 or w % 4:
        raise DimensionError(
            f"unet_forward: spatial dims {h}x{w} must be divisible by 4; pad the input "
            f"(denoise_cube does this automatically)")

    x = ops.concat_channels([y, sigma_hat])
    e1 = _cr(_cr(x, params, "enc1a"), params, "enc1b")
    e2 = _cr(_cr(ops.pool2d(e1, "max2x2"), params, "enc2a"), params, "enc2b")
    b = ops.pool2d(e2, "max2x2")
    for name in ("bot1", "bot2", "bot3", "bot4"):
        b = _cr(b, params, name)
    d2 = _cr(ops.resize_nearest(b, factor=2), params, "up2")
    d2 = _cr(_cr(ops.concat_channels([d2, e2]), params, "dec2a"), params, "dec2b")
    d1 = _cr(ops.resize_nearest(d2, factor=2), params, "up1")
    d1 = _cr(_cr(ops.concat_channels([d1, e1]), params, "dec1a"), params, "dec1b")
    d1 = _cr(d1, params, "head")
    return _cr(d1, params, "out", act=False)


def denoise(y: Tensor, sigma_hat: Tensor, params: UNetParams) -> Tensor:
    """``D = Y + unet(Y, sigma_hat)``."""
    return ops.add(y, unet_forward(y, sigma_hat, params))
