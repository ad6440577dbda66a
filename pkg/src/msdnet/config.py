"""Run configuration and its flat ``key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable

from .data import NoiseSpec
from .losses import LossWeights
from .model import ModelConfig


class ConfigError(ValueError):
    """A config file problem; the message names the line and key."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and loop settings. Defaults are the full-scale published setup;
    :meth:`desk_scale` gives the small setup used by the CLI."""

    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    weight_decay_mode: str = "l2"
    batch_size: int = 64
    epochs: int = 100
    patch_size: int = 64
    patch_stride: int = 0
    seed: int = 0
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec.fixed(30.0))
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fresh_noise: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.patch_size < 1 or self.patch_stride < 0:
            raise ValueError("batch_size/patch_size must be >= 1, epochs and patch_stride >= 0")
        if self.weight_decay_mode not in ("l2", "decoupled"):
            raise ValueError(f"weight_decay_mode must be 'l2' or 'decoupled', got {self.weight_decay_mode!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("adam betas must be in [0, 1) and eps > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        base = dict(batch_size=8, epochs=5, patch_size=32)
        base.update(overrides)
        return cls(**base)

    @property
    def stride(self) -> int:
        return self.patch_stride or self.patch_size


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig.desk_scale)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def replace(self, **changes) -> "RunConfig":
        """Return a copy with flat keys (as in the text form) changed."""
        return from_mapping(changes, base=self)

    def to_text(self) -> str:
        values = _flatten(self)
        return "".join(f"{key} = {_KEYS[key][2](values[key])}\n" for key in _KEYS)


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _fmt_ints(v) -> str:
    return ",".join(str(i) for i in v)


def _fmt_float(v: float) -> str:
    return repr(float(v))


# key -> (section, field, formatter, parser)
_KEYS: dict[str, tuple[str, str, Callable[[Any], str], Callable[[str], Any]]] = {
    "learning_rate": ("train", "learning_rate", _fmt_float, float),
    "weight_decay": ("train", "weight_decay", _fmt_float, float),
    "weight_decay_mode": ("train", "weight_decay_mode", str, str.strip),
    "batch_size": ("train", "batch_size", str, int),
    "epochs": ("train", "epochs", str, int),
    "patch_size": ("train", "patch_size", str, int),
    "patch_stride": ("train", "patch_stride", str, int),
    "seed": ("train", "seed", str, int),
    "beta1": ("train", "beta1", _fmt_float, float),
    "beta2": ("train", "beta2", _fmt_float, float),
    "adam_eps": ("train", "adam_eps", _fmt_float, float),
    "fresh_noise": ("train", "fresh_noise", lambda v: str(v).lower(), _bool),
    "deterministic": ("train", "deterministic", lambda v: str(v).lower(), _bool),
    "noise_mode": ("noise", "mode", str, str.strip),
    "sigma": ("noise", "sigma", _fmt_float, float),
    "blind_lo": ("noise", "lo", _fmt_float, float),
    "blind_hi": ("noise", "hi", _fmt_float, float),
    "bands": ("model", "bands", str, int),
    "base_channels": ("model", "base_channels", str, int),
    "block_growth": ("model", "block_growth", lambda v: str(v or 0), int),
    "kernel_sizes": ("model", "kernel_sizes", _fmt_ints, _ints),
    "blocks_per_module": ("model", "blocks_per_module", str, int),
    "pyramid_bins": ("model", "pyramid_bins", _fmt_ints, _ints),
    "attention_reduction": ("model", "attention_reduction", str, int),
    "unet_widths": ("model", "unet_widths", _fmt_ints, _ints),
    "alpha": ("loss", "alpha", _fmt_float, float),
    "lambda_asymm": ("loss", "lambda_asymm", _fmt_float, float),
    "perceptual_layer": ("loss", "perceptual_layer", str, int),
    "asymm_reduction": ("loss", "asymm_reduction", str, str.strip),
}

CONFIG_KEYS = tuple(_KEYS)


def _flatten(cfg: RunConfig) -> dict[str, Any]:
    sections = {
        "train": dataclasses.asdict(cfg.train),
        "noise": dataclasses.asdict(cfg.train.noise),
        "model": dataclasses.asdict(cfg.model),
        "loss": dataclasses.asdict(cfg.loss),
    }
    return {key: sections[sec][name] for key, (sec, name, _, _) in _KEYS.items()}


def from_mapping(values: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    sections: dict[str, dict[str, Any]] = {"train": {}, "noise": {}, "model": {}, "loss": {}}
    for key, value in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        sec, name, _, _ = _KEYS[key]
        sections[sec][name] = value
    m = sections["model"]
    if m.get("block_growth") == 0:
        m["block_growth"] = None
    for name in ("kernel_sizes", "pyramid_bins", "unet_widths"):
        if name in m:
            m[name] = tuple(m[name])
    noise = dataclasses.replace(base.train.noise, **sections["noise"])
    train = dataclasses.replace(base.train, noise=noise, **sections["train"])
    model = dataclasses.replace(base.model, **m)
    model.estimator()
    model.unet()
    loss = dataclasses.replace(base.loss, **sections["loss"])
    return RunConfig(train, model, loss)


def parse_config(text: str, base: RunConfig | None = None) -> tuple[RunConfig, set[str]]:
    """Parse ``key = value`` lines (``#`` starts a comment).

    Returns the config with defaults filled in and the set of keys that were
    given explicitly.
    """
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        try:
            values[key] = _KEYS[key][3](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: key {key!r}: {exc}") from None
        lines[key] = lineno
    try:
        cfg = from_mapping(values, base)
    except (ValueError, TypeError) as exc:
        # blame the first line whose value is invalid on its own
        for key, lineno in lines.items():
            try:
                from_mapping({key: values[key]}, base)
            except (ValueError, TypeError) as single:
                raise ConfigError(f"line {lineno}: key {key!r}: {single}") from None
        raise ConfigError(f"keys {', '.join(lines)} (lines {', '.join(map(str, lines.values()))}) "
                          f"are inconsistent: {exc}") from None
    return cfg, set(values)


def load_config(path) -> tuple[RunConfig, set[str]]:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
