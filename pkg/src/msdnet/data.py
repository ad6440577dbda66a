"""Hyperspectral cubes: storage, synthesis, patching, noise and band export."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

PathLike = Union[str, "os.PathLike[str]"]

HSIF_MAGIC = b"HSIF"
HSIF_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
# payload cap: 2**31 float32 values (8 GiB); anything larger is a corrupt header
_MAX_VALUES = 2 ** 31


class HsifError(ValueError):
    """Base class for HSIF parse failures."""


class BadMagicError(HsifError):
    pass


class UnsupportedVersionError(HsifError):
    pass


class TruncatedPayloadError(HsifError):
    pass


class DimensionOverflowError(HsifError):
    pass


@dataclass
class HsiCube:
    """A ``B x H x W`` cube stored as float32, band-major."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"HsiCube needs a non-empty B x H x W array, got shape {data.shape}")
        self.data = data

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian corruption on the 0-255 scale.

    ``mode="fixed"`` uses ``sigma`` for every band; ``mode="blind"`` draws one
    sigma per band uniformly from ``[lo, hi]``.
    """

    mode: str = "fixed"
    sigma: float = 30.0
    lo: float = 10.0
    hi: float = 70.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "blind"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.mode == "fixed" and self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.mode == "blind" and not 0 <= self.lo <= self.hi:
            raise ValueError(f"blind range needs 0 <= lo <= hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def fixed(cls, sigma: float, seed: int = 0) -> "NoiseSpec":
        return cls("fixed", sigma=sigma, seed=seed)

    @classmethod
    def blind(cls, lo: float, hi: float, seed: int = 0) -> "NoiseSpec":
        return cls("blind", lo=lo, hi=hi, seed=seed)

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.mode, self.sigma, self.lo, self.hi, seed)

    @property
    def label(self) -> str:
        if self.mode == "blind":
            return "blind"
        return f"sigma={self.sigma:g}"


# ---------------------------------------------------------------- HSIF

def save_cube(cube: HsiCube, path: PathLike) -> None:
    b, h, w = cube.shape
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(HSIF_MAGIC, HSIF_VERSION, b, h, w))
        fh.write(payload)


def load_cube(path: PathLike) -> HsiCube:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_cube(raw)


def parse_cube(raw: bytes) -> HsiCube:
    if len(raw) < 4 or raw[:4] != HSIF_MAGIC:
        raise BadMagicError(f"not an HSIF file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"header needs {_HEADER.size} bytes, file has {len(raw)}")
    _, version, b, h, w = _HEADER.unpack_from(raw)
    if version != HSIF_VERSION:
        raise UnsupportedVersionError(f"HSIF version {version}, expected {HSIF_VERSION}")
    if min(b, h, w) < 1:
        raise DimensionOverflowError(f"dimensions must be >= 1, got {b}x{h}x{w}")
    count = b * h * w
    if count > _MAX_VALUES:
        raise DimensionOverflowError(f"{b}x{h}x{w} = {count} values exceeds the format limit")
    need = _HEADER.size + 4 * count
    if len(raw) < need:
        raise TruncatedPayloadError(f"payload needs {need} bytes, file has {len(raw)}")
    if len(raw) > need:
        raise HsifError(f"{len(raw) - need} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    return HsiCube(data.reshape(b, h, w).astype(np.float32))


# ---------------------------------------------------------------- synthesis

def synth_cube(seed: int, bands: int, height: int, width: int, terms: int = 4) -> HsiCube:
    """Smooth synthetic reflectance cube in [0.05, 0.95].

    Each term is a product of a low-frequency spatial sinusoid pair and a
    slowly varying spectral profile, so neighbouring bands are strongly
    correlated.
    """
    if min(bands, height, width) < 1:
        raise ValueError(f"dimensions must be >= 1, got {bands}x{height}x{width}")
    rng = np.random.default_rng(seed)
    y = np.arange(height)[:, None] / height
    x = np.arange(width)[None, :] / width
    b = np.arange(bands)[:, None, None] / max(bands, 1)
    cube = np.zeros((bands, height, width))
    for _ in range(terms):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        py, px, pb = rng.uniform(0, 2 * np.pi, size=3)
        fb = rng.uniform(0.1, 0.6)
        amp = rng.uniform(0.5, 1.0)
        spatial = np.sin(2 * np.pi * fy * y + py) * np.sin(2 * np.pi * fx * x + px)
        spectral = 1.0 + 0.5 * np.cos(np.pi * fb * b + pb)
        cube += amp * spectral * spatial[None]
    lo, hi = cube.min(), cube.max()
    if hi - lo < 1e-12:
        cube = np.full_like(cube, 0.5)
    else:
        cube = 0.05 + 0.9 * (cube - lo) / (hi - lo)
    return HsiCube(np.clip(cube, 0.05, 0.95))


def extract_patches(cube: HsiCube, size: int = 64, stride: int | None = None) -> list[HsiCube]:
    """Row-major ``size x size`` patches keeping every band."""
    stride = size if stride is None else stride
    if stride < 1 or size < 1:
        raise ValueError(f"size and stride must be >= 1, got {size}, {stride}")
    if size > cube.height or size > cube.width:
        raise ValueError(
            f"patch size {size} exceeds cube spatial dims {cube.height}x{cube.width}")
    out = []
    for r in range(0, cube.height - size + 1, stride):
        for c in range(0, cube.width - size + 1, stride):
            out.append(HsiCube(cube.data[:, r:r + size, c:c + size].copy()))
    return out


# ---------------------------------------------------------------- noise

def standard_normal(seed: int, count: int, skip: int = 0) -> np.ndarray:
    """Box-Muller normals from a Philox counter stream keyed by ``seed``.

    Uniform pairs ``(u1, u2)`` give ``sqrt(-2 ln(1-u1)) * (cos, sin)(2 pi u2)``,
    interleaved. ``skip`` uniforms are consumed first.
    """
    gen = np.random.Generator(np.random.Philox(key=seed & (2 ** 128 - 1)))
    if skip:
        gen.random(skip)
    pairs = (count + 1) // 2
    u = gen.random(2 * pairs)
    r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:count]


def band_sigmas(spec: NoiseSpec, bands: int) -> np.ndarray:
    """Per-band sigma on the 0-255 scale."""
    if spec.mode == "fixed":
        return np.full(bands, float(spec.sigma))
    gen = np.random.Generator(np.random.Philox(key=spec.seed & (2 ** 128 - 1)))
    return spec.lo + (spec.hi - spec.lo) * gen.random(bands)


def add_awgn(cube: HsiCube, spec: NoiseSpec) -> tuple[HsiCube, HsiCube]:
    """Corrupt ``cube`` with zero-mean Gaussian noise of std ``sigma/255``.

    Returns the noisy cube (not clipped) and the per-pixel truth sigma map
    on the [0, 1] scale.
    """
    b, h, w = cube.shape
    sig = band_sigmas(spec, b) / 255.0
    skip = b if spec.mode == "blind" else 0
    z = standard_normal(spec.seed, b * h * w, skip=skip).reshape(b, h, w)
    noisy = cube.data.astype(np.float64) + sig[:, None, None] * z
    truth = np.broadcast_to(sig[:, None, None], (b, h, w))
    return HsiCube(noisy), HsiCube(truth)


# ---------------------------------------------------------------- export

def export_band_pgm(cube: HsiCube, band: int, path: PathLike) -> None:
    """Write one band as an 8-bit binary PGM (clamped to [0, 1], round half up)."""
    if not 0 <= band < cube.bands:
        raise IndexError(f"band {band} out of range for a {cube.bands}-band cube")
    plane = np.clip(cube.data[band].astype(np.float64), 0.0, 1.0)
    pixels = np.floor(plane * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cube.width} {cube.height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    body = raw[len(raw) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
