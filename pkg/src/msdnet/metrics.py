"""Band-averaged PSNR and SSIM, spectral angle mapper, and Table-style reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import HsiCube, NoiseSpec, add_awgn

PSNR_IDENTICAL = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
INDEXES = ("PSNR", "SSIM", "SAM")


def _pair(ref: HsiCube, test: HsiCube) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(ref.data if isinstance(ref, HsiCube) else ref, dtype=np.float64)
    b = np.asarray(test.data if isinstance(test, HsiCube) else test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(ref: HsiCube, test: HsiCube) -> float:
    """Mean over bands of ``10 log10(1 / MSE_b)`` (data range 1).

    A band with zero error scores :data:`PSNR_IDENTICAL`.
    """
    a, b = _pair(ref, test)
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        per_band = np.where(mse > 0, -10.0 * np.log10(np.where(mse > 0, mse, 1.0)), PSNR_IDENTICAL)
    return float(per_band.mean())


def _gauss1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 2-D Gaussian SSIM window."""
    g = _gauss1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win1d: np.ndarray) -> np.ndarray:
    k = win1d.size
    rows = sliding_window_view(img, k, axis=0) @ win1d
    return sliding_window_view(rows, k, axis=1) @ win1d


def ssim_band(x: np.ndarray, y: np.ndarray) -> float:
    k = SSIM_WINDOW
    if x.shape[0] < k or x.shape[1] < k:
        raise ValueError(f"SSIM needs bands of at least {k}x{k}, got {x.shape[0]}x{x.shape[1]}")
    g = _gauss1d()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def ssim(ref: HsiCube, test: HsiCube) -> float:
    """Band-averaged SSIM with an 11x11 Gaussian window (sigma 1.5), valid region only."""
    a, b = _pair(ref, test)
    return float(np.mean([ssim_band(a[i], b[i]) for i in range(a.shape[0])]))


def sam(ref: HsiCube, test: HsiCube) -> float:
    """Mean spectral angle in radians; pixels with a (near-)zero spectrum count as 0."""
    a, b = _pair(ref, test)
    if a.shape[0] < 2:
        raise ValueError("SAM needs at least 2 bands")
    return _spectral_angle(a, b)


def _spectral_angle(a: np.ndarray, b: np.ndarray) -> float:
    dot = (a * b).sum(axis=0)
    na = np.sqrt((a * a).sum(axis=0))
    nb = np.sqrt((b * b).sum(axis=0))
    valid = (na >= 1e-12) & (nb >= 1e-12)
    cos = np.where(valid, dot / np.where(valid, na * nb, 1.0), 1.0)
    ang = np.where(valid, np.arccos(np.clip(cos, -1.0, 1.0)), 0.0)
    return float(ang.mean())


# ---------------------------------------------------------------- reports

@dataclass
class MetricsReport:
    """Rows keyed by noise setting; each maps method -> {index: value}."""

    rows: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows.values():
            for m in row:
                if m not in seen:
                    seen.append(m)
        return seen

    def add(self, setting: str, method: str, values: dict[str, float]) -> None:
        self.rows.setdefault(setting, {})[method] = dict(values)

    def value(self, setting: str, method: str, index: str) -> float:
        return self.rows[setting][method][index]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["noise", "index", "method", "value"])
        for setting, row in self.rows.items():
            for index in INDEXES:
                for method, vals in row.items():
                    w.writerow([setting, index, method, f"{vals[index]:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        methods = self.methods
        head = f"{'Noise':<10} {'Index':<6}" + "".join(f"{m:>12}" for m in methods)
        lines = [head, "-" * len(head)]
        for setting, row in self.rows.items():
            for k, index in enumerate(INDEXES):
                label = setting if k == 0 else ""
                cells = []
                for m in methods:
                    v = row.get(m, {}).get(index)
                    fmt = "{:12.2f}" if index == "PSNR" else "{:12.3f}"
                    cells.append(fmt.format(v) if v is not None else f"{'-':>12}")
                lines.append(f"{label:<10} {index:<6}" + "".join(cells))
        return "\n".join(lines) + "\n"


def all_metrics(ref: HsiCube, test: HsiCube) -> dict[str, float]:
    out = {"PSNR": psnr(ref, test), "SSIM": ssim(ref, test)}
    # one-band spectra are collinear or opposite, so the angle is still defined
    out["SAM"] = _spectral_angle(*_pair(ref, test))
    return out


def evaluate(clean: HsiCube, model, settings: Sequence[NoiseSpec],
             method: str = "MSDNet") -> MetricsReport:
    """Corrupt ``clean`` per setting, denoise it and score noisy and denoised cubes."""
    from .model import denoise_cube

    report = MetricsReport()
    for spec in settings:
        noisy, _ = add_awgn(clean, spec)
        denoised = denoise_cube(noisy, model)
        report.add(spec.label, "Noisy", all_metrics(clean, noisy))
        report.add(spec.label, method, all_metrics(clean, denoised))
    return report
