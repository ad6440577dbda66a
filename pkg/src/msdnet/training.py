"""Adam optimisation, the training loop and checkpoint files."""
from __future__ import annotations

import contextlib
import copy
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff.tensor import Tape, Tensor, backward
from .config import RunConfig, TrainConfig, parse_config
from .data import HsiCube, add_awgn
from .losses import FeatureExtractor, total_loss
from .model import MSDNet, init_model, model_from_arrays

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"MSDC"
CKPT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")
        self.name = name


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN/Inf loss. ``checkpoint`` holds the last good state."""

    def __init__(self, message: str, checkpoint: "Checkpoint"):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(ValueError):
    pass


class BadCheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError):
    pass


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update in place.

    With ``weight_decay_mode="l2"`` the decay term ``wd * w`` is added to the
    gradient before the moment updates; ``"decoupled"`` shrinks the weight
    directly by ``lr * wd * w``. All gradients are checked before any
    parameter is touched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    lr, wd = config.learning_rate, config.weight_decay
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if wd and config.weight_decay_mode == "l2":
            g = g + wd * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if wd and config.weight_decay_mode == "decoupled":
            update = update + lr * wd * p.data
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: RunConfig
    model: MSDNet
    adam: AdamState
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)

    def copy(self) -> "Checkpoint":
        arrays = {k: p.data.copy() for k, p in self.model.parameters().items()}
        return Checkpoint(self.config, model_from_arrays(self.config.model, arrays),
                          copy.deepcopy(self.adam), self.epoch, list(self.loss_history))


def _record(name: str, array: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.array(array, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
    head = struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape)
    return head + arr.tobytes()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config.to_text().encode("utf-8")
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg)), cfg]
    params = ckpt.model.parameters()
    for name, p in params.items():
        out.append(_record(name, p.data))
    for name in params:
        out.append(_record(f"adam.m/{name}", ckpt.adam.m[name]))
        out.append(_record(f"adam.v/{name}", ckpt.adam.v[name]))
    out.append(_record("adam.t", np.array(ckpt.adam.t)))
    out.append(_record("epoch", np.array(ckpt.epoch)))
    out.append(_record("loss_history", np.array(ckpt.loss_history, dtype=np.float64)))
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: the target is only replaced once the file is complete."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedCheckpointError(f"file ends inside {what} (offset {self.pos})")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    @property
    def done(self) -> bool:
        return self.pos >= len(self.raw)


def parse_checkpoint(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if raw[:4] != CKPT_MAGIC:
        raise BadCheckpointMagicError(f"not a checkpoint (magic {raw[:4]!r})")
    r.pos = 4
    version = r.u32("version")
    if version != CKPT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {CKPT_VERSION}")
    cfg_len = r.u32("config length")
    config, _ = parse_config(r.take(cfg_len, "config block").decode("utf-8"))

    shapes = config.model.shapes()
    expected: dict[str, Optional[tuple[int, ...]]] = dict(shapes)
    for name, shape in shapes.items():
        expected[f"adam.m/{name}"] = shape
        expected[f"adam.v/{name}"] = shape
    expected.update({"adam.t": (), "epoch": (), "loss_history": None})

    arrays: dict[str, np.ndarray] = {}
    while not r.done:
        nlen = r.u32("record name length")
        name = r.take(nlen, "record name").decode("utf-8")
        rank = r.u32(f"rank of {name!r}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name!r}"))
        count = math.prod(dims)
        payload = r.take(4 * count, f"payload of {name!r}")
        if name not in expected:
            raise UnknownParameterError(f"unknown parameter {name!r} in checkpoint")
        if expected[name] is not None and tuple(dims) != expected[name]:
            raise CheckpointError(f"parameter {name!r} has shape {dims}, config implies {expected[name]}")
        if name in arrays:
            raise CheckpointError(f"parameter {name!r} appears twice")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    missing = [k for k in expected if k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint is missing {len(missing)} records, e.g. {missing[0]!r}")

    model = model_from_arrays(config.model, {k: arrays[k] for k in shapes})
    adam = AdamState({k: arrays[f"adam.m/{k}"] for k in shapes},
                     {k: arrays[f"adam.v/{k}"] for k in shapes}, int(arrays["adam.t"]))
    history = [float(x) for x in arrays["loss_history"]]
    return Checkpoint(config, model, adam, int(arrays["epoch"]), history)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


# ---------------------------------------------------------------- training loop

def derive_seed(*words: int) -> int:
    """64-bit seed from a tuple of nonnegative integers."""
    state = np.random.SeedSequence(list(words)).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def initial_checkpoint(config: RunConfig) -> Checkpoint:
    model = init_model(config.model, seed=config.train.seed, dtype=np.float32)
    return Checkpoint(config, model, AdamState.zeros_like(model.parameters()), 0, [])


def _thread_limit(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(1)


def _check_patches(patches: list[HsiCube], bands: int) -> None:
    if not patches:
        raise ValueError("no training patches")
    shape = patches[0].shape
    for i, p in enumerate(patches):
        if p.shape != shape:
            raise ValueError(f"patch {i} has shape {p.shape}, patch 0 has {shape}")
    if shape[0] != bands:
        raise ValueError(f"patches have {shape[0]} bands, model expects {bands}")
    if shape[1] % 4 or shape[2] % 4:
        raise ValueError(f"patch spatial dims {shape[1]}x{shape[2]} must be divisible by 4")


def corrupt_batch(patches: list[HsiCube], indices, config: TrainConfig, step: int):
    """Noisy batch and truth sigma maps for the given patch indices."""
    noisy, truth = [], []
    for slot, idx in enumerate(indices):
        if config.fresh_noise:
            seed = derive_seed(config.seed, 1, step, slot)
        else:
            seed = derive_seed(config.seed, 2, int(idx))
        n, t = add_awgn(patches[idx], config.noise.with_seed(seed))
        noisy.append(n.data)
        truth.append(t.data)
    return np.stack(noisy), np.stack(truth)


def train(patches: list[HsiCube], config: RunConfig, resume: Optional[Checkpoint] = None,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> Checkpoint:
    """Fit the estimator and denoiser on clean patches.

    Each step corrupts a batch with seeded AWGN, runs estimator then
    denoiser, backpropagates the total loss and applies one Adam update.
    An epoch visits every patch once in a seeded shuffled order; when there
    are fewer patches than the batch size the order is cycled to fill the
    batch. Training continues from ``resume`` up to ``config.train.epochs``.
    """
    tc = config.train
    _check_patches(patches, config.model.bands)
    ckpt = resume.copy() if resume is not None else initial_checkpoint(config)
    ckpt.config = config
    model = ckpt.model
    params = model.parameters()
    extractor = FeatureExtractor(config.model.bands, dtype=np.float32)
    clean_all = np.stack([p.data for p in patches]).astype(np.float32)
    n = len(patches)
    steps = -(-n // tc.batch_size)

    with _thread_limit(tc.deterministic):
        for epoch in range(ckpt.epoch, tc.epochs):
            last_good = ckpt.copy()
            order = np.random.default_rng(derive_seed(tc.seed, 0, epoch)).permutation(n)
            order = np.resize(order, steps * tc.batch_size)
            losses = []
            for s in range(steps):
                idx = order[s * tc.batch_size:(s + 1) * tc.batch_size]
                noisy, truth = corrupt_batch(patches, idx, tc, ckpt.adam.t)
                y = Tensor.wrap(noisy.astype(np.float32))
                g = Tensor.wrap(clean_all[idx])
                nt = Tensor.wrap(truth.astype(np.float32))
                model.zero_grad()
                with Tape() as tape:
                    d, sigma_hat = model(y)
                    loss = total_loss(g, d, sigma_hat, nt, config.loss, extractor)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteLossError(f"loss became {value} at epoch {epoch + 1}, step {s + 1}",
                                             last_good)
                backward(tape, loss)
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                try:
                    adam_step(params, grads, ckpt.adam, tc)
                except NonFiniteGradientError as exc:
                    raise NonFiniteLossError(str(exc), last_good) from exc
                losses.append(value)
            epoch_loss = float(np.float32(np.mean(losses)))
            ckpt.loss_history.append(epoch_loss)
            ckpt.epoch = epoch + 1
            logger.info("epoch %d loss %.6g", epoch + 1, epoch_loss)
            if on_epoch is not None:
                on_epoch(epoch + 1, epoch_loss)
    return ckpt
