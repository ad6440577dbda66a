"""Hyperspectral denoising: a noise-level estimator feeding a residual UNet.

Everything runs on :mod:`msdnet.autodiff`, a small reverse-mode engine over
numpy arrays.
"""
from .config import RunConfig, TrainConfig
from .data import HsiCube, NoiseSpec, add_awgn, load_cube, save_cube, synth_cube
from .metrics import evaluate, psnr, sam, ssim
from .model import MSDNet, ModelConfig, denoise_cube, init_model
from .training import load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "HsiCube", "MSDNet", "ModelConfig", "NoiseSpec", "RunConfig", "TrainConfig", "add_awgn",
    "denoise_cube", "evaluate", "init_model", "load_checkpoint", "load_cube", "psnr", "sam",
    "save_checkpoint", "save_cube", "ssim", "synth_cube", "train",
]
