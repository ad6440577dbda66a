"""Full blind denoiser: noise estimator feeding the residual UNet."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor
from .data import HsiCube
from .estimator import EstimatorConfig, EstimatorParams, estimate_noise, init_estimator
from .unet import DEFAULT_WIDTHS, UNetConfig, UNetParams, denoise, init_unet


@dataclass(frozen=True)
class ModelConfig:
    bands: int = 1
    base_channels: int = 16
    block_growth: int | None = None
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    blocks_per_module: int = 6
    pyramid_bins: tuple[int, ...] = (1, 2, 3, 6)
    attention_reduction: int = 4
    unet_widths: tuple[int, int, int] = DEFAULT_WIDTHS

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(
            bands=self.bands, base_channels=self.base_channels, kernel_sizes=self.kernel_sizes,
            blocks_per_module=self.blocks_per_module, block_growth=self.block_growth,
            pyramid_bins=self.pyramid_bins, attention_reduction=self.attention_reduction)

    def unet(self) -> UNetConfig:
        return UNetConfig(bands=self.bands, widths=self.unet_widths)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        s = {f"est.{k}": v for k, v in self.estimator().shapes().items()}
        s.update({f"unet.{k}": v for k, v in self.unet().shapes().items()})
        return s


@dataclass
class MSDNet:
    config: ModelConfig
    estimator: EstimatorParams
    unet: UNetParams

    def parameters(self) -> dict[str, Tensor]:
        """All learnable tensors under ``est.`` / ``unet.`` prefixes, in a fixed order."""
        out = {f"est.{k}": v for k, v in self.estimator.tensors.items()}
        out.update({f"unet.{k}": v for k, v in self.unet.tensors.items()})
        return out

    def __call__(self, y: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(denoised, sigma_hat)`` for a noisy ``[B,H,W]`` or ``[N,B,H,W]`` tensor."""
        sigma_hat = estimate_noise(y, self.estimator)
        return denoise(y, sigma_hat, self.unet), sigma_hat

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float64) -> MSDNet:
    rng = np.random.default_rng(seed)
    est = init_estimator(config.estimator(), rng, dtype)
    unet = init_unet(config.unet(), rng, dtype)
    return MSDNet(config, est, unet)


def model_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> MSDNet:
    est = {k[4:]: Tensor.wrap(v, requires_grad=True) for k, v in arrays.items() if k.startswith("est.")}
    unet = {k[5:]: Tensor.wrap(v, requires_grad=True) for k, v in arrays.items() if k.startswith("unet.")}
    ordered_est = {k: est[k] for k in config.estimator().shapes()}
    ordered_unet = {k: unet[k] for k in config.unet().shapes()}
    return MSDNet(config, EstimatorParams(config.estimator(), ordered_est),
                  UNetParams(config.unet(), ordered_unet))


def spectral_windows(bands: int, window: int) -> list[int]:
    """Start band of each window; stride ``max(1, window // 2)``, last window flush with the end."""
    if bands < window:
        raise ValueError(f"cube has {bands} bands but the model needs windows of {window}")
    stride = max(1, window // 2)
    starts = list(range(0, bands - window + 1, stride))
    if starts[-1] != bands - window:
        starts.append(bands - window)
    return starts


def _pad_amounts(size: int, minimum: int) -> int:
    target = max(minimum, -(-size // 4) * 4)
    return target - size


def denoise_cube(cube: HsiCube, model: MSDNet, return_sigma: bool = False):
    """Denoise a whole cube of any size and band count.

    Spatial dims are reflection-padded up to a multiple of 4 (and at least the
    estimator's minimum size) and cropped back. Cubes whose band count differs
    from the model's are processed in overlapping spectral windows and the
    overlapping predictions averaged.
    """
    if cube.bands < 1:
        raise ValueError("cube has no bands")
    window = model.config.bands
    h, w = cube.height, cube.width
    need = max(8, max(model.config.pyramid_bins))
    ph, pw = _pad_amounts(h, need), _pad_amounts(w, need)
    data = cube.data.astype(model.estimator["stem.w"].dtype)
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "symmetric"
        data = np.pad(data, ((0, 0), (0, ph), (0, pw)), mode=mode)

    acc = np.zeros(data.shape, dtype=np.float64)
    sig = np.zeros(data.shape, dtype=np.float64)
    hits = np.zeros(cube.bands)
    for s in spectral_windows(cube.bands, window):
        d, sh = model(Tensor.wrap(np.ascontiguousarray(data[s:s + window])))
        acc[s:s + window] += d.data
        sig[s:s + window] += sh.data
        hits[s:s + window] += 1
    acc /= hits[:, None, None]
    sig /= hits[:, None, None]
    out = HsiCube(acc[:, :h, :w])
    if return_sigma:
        return out, HsiCube(sig[:, :h, :w])
    return out
