import math

import numpy as np
import pytest

from msdnet.autodiff import Tensor
from msdnet.config import RunConfig, TrainConfig
from msdnet.data import NoiseSpec, extract_patches, synth_cube
from msdnet.training import (
    AdamState,
    BadCheckpointMagicError,
    CheckpointVersionError,
    NonFiniteGradientError,
    NonFiniteLossError,
    TruncatedCheckpointError,
    UnknownParameterError,
    adam_step,
    checkpoint_bytes,
    corrupt_batch,
    initial_checkpoint,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
    train,
)

from oracles import scalar_adam

MICRO = dict(bands=1, base_channels=4, blocks_per_module=2, unet_widths=(4, 8, 16),
             batch_size=2, epochs=2, patch_size=8)


def micro_config(**changes):
    return RunConfig().replace(**{**MICRO, **changes})


def micro_patches(bands=1):
    return extract_patches(synth_cube(0, bands, 16, 16), 8)


def _param(value):
    return {"w": Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)}


# ---------------------------------------------------------------- Adam

def test_adam_first_step_is_lr():
    cfg = TrainConfig(weight_decay=0.0)
    p = _param(np.array([1.0, -2.0, 0.5]))
    g = np.array([3.0, -0.01, 1e-3])
    adam_step(p, {"w": g}, AdamState.zeros_like(p), cfg)
    delta = p["w"].data - np.array([1.0, -2.0, 0.5])
    # bias-corrected first moment is g and second is g^2, so the step is lr*|g|/(|g|+eps)
    expected = cfg.learning_rate * np.abs(g) / (np.abs(g) + cfg.adam_eps)
    np.testing.assert_allclose(np.abs(delta), expected, rtol=1e-9)
    assert np.all(np.abs(np.abs(delta) - cfg.learning_rate) < 1e-6)
    assert np.all(np.sign(delta) == -np.sign(g))


def test_adam_zero_gradient_no_decay_is_identity():
    p = _param(np.array([0.3, -0.7]))
    state = AdamState.zeros_like(p)
    for _ in range(3):
        adam_step(p, {"w": np.zeros(2)}, state, TrainConfig(weight_decay=0.0))
    np.testing.assert_array_equal(p["w"].data, [0.3, -0.7])
    assert state.t == 3


@pytest.mark.parametrize("wd", [0.0, 5e-4, 0.1])
def test_adam_matches_scalar_trace(wd):
    cfg = TrainConfig(learning_rate=0.05, weight_decay=wd)
    p = _param(np.array([1.0]))
    state = AdamState.zeros_like(p)
    trace = [1.0]
    for _ in range(3):
        adam_step(p, {"w": 2 * p["w"].data}, state, cfg)
        trace.append(float(p["w"].data[0]))
    ref = scalar_adam(1.0, lambda w: 2 * w, 3, 0.05, wd=wd)
    assert max(abs(a - b) for a, b in zip(trace, ref)) < 1e-10


def test_adam_step_scale_invariance():
    rng = np.random.default_rng(0)
    g = rng.normal(size=20)
    steps = []
    for c in (1.0, 1000.0):
        p = _param(np.zeros(20))
        adam_step(p, {"w": c * g}, AdamState.zeros_like(p), TrainConfig(weight_decay=0.0))
        steps.append(p["w"].data)
    np.testing.assert_array_equal(np.sign(steps[0]), np.sign(steps[1]))
    assert np.max(np.abs(steps[1] / steps[0] - 1)) < 0.01


def test_weight_decay_shrinks_geometrically():
    for mode in ("l2", "decoupled"):
        cfg = TrainConfig(learning_rate=1e-2, weight_decay=0.5, weight_decay_mode=mode)
        p = _param(np.array([2.0, -1.0]))
        state = AdamState.zeros_like(p)
        mags = [np.abs(p["w"].data).copy()]
        for _ in range(50):
            adam_step(p, {"w": np.zeros(2)}, state, cfg)
            mags.append(np.abs(p["w"].data).copy())
        mags = np.array(mags)
        assert np.all(np.diff(mags, axis=0) < 0)
        assert np.all(mags[-1] < mags[0])
        assert np.all(np.sign(p["w"].data) == [1, -1])


def test_decoupled_decay_is_exactly_geometric():
    cfg = TrainConfig(learning_rate=1e-2, weight_decay=0.5, weight_decay_mode="decoupled")
    p = _param(np.array([2.0]))
    state = AdamState.zeros_like(p)
    for _ in range(10):
        adam_step(p, {"w": np.zeros(1)}, state, cfg)
    assert p["w"].data[0] == pytest.approx(2.0 * (1 - 1e-2 * 0.5) ** 10, rel=1e-12)


def test_adam_rejects_non_finite_gradient():
    p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
    state = AdamState.zeros_like(p)
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, state, TrainConfig())
    np.testing.assert_array_equal(p["a"].data, 1.0)
    assert state.t == 0


# ---------------------------------------------------------------- training loop

def test_epochs_zero_returns_initialisation():
    cfg = micro_config(epochs=0)
    ckpt = train(micro_patches(), cfg)
    init = initial_checkpoint(cfg)
    for name, p in init.model.parameters().items():
        np.testing.assert_array_equal(ckpt.model.parameters()[name].data, p.data)
    assert ckpt.loss_history == [] and ckpt.epoch == 0


def test_training_is_deterministic_and_finite():
    cfg = micro_config()
    a, b = train(micro_patches(), cfg), train(micro_patches(), cfg)
    assert a.loss_history == b.loss_history
    assert len(a.loss_history) == 2 and all(math.isfinite(x) for x in a.loss_history)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    c = train(micro_patches(), micro_config(seed=1))
    assert c.loss_history != a.loss_history


def test_resume_matches_uninterrupted_run():
    patches = micro_patches()
    full = train(patches, micro_config(epochs=3))
    part = train(patches, micro_config(epochs=1))
    resumed = train(patches, micro_config(epochs=3), resume=parse_checkpoint(checkpoint_bytes(part)))
    assert resumed.loss_history == full.loss_history
    assert checkpoint_bytes(resumed) == checkpoint_bytes(full)


def test_on_epoch_callback_and_blind_noise():
    seen = []
    ckpt = train(micro_patches(2), micro_config(bands=2, noise_mode="blind"),
                 on_epoch=lambda e, loss: seen.append((e, loss)))
    assert seen == list(enumerate(ckpt.loss_history, start=1))


def test_train_rejects_bad_patches():
    with pytest.raises(ValueError, match="no training patches"):
        train([], micro_config())
    with pytest.raises(ValueError, match="bands"):
        train(micro_patches(2), micro_config())
    with pytest.raises(ValueError, match="divisible by 4"):
        train(extract_patches(synth_cube(0, 1, 10, 10), 10), micro_config())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_keeps_last_good_checkpoint():
    cfg = micro_config(epochs=3)
    ckpt = train(micro_patches(), micro_config(epochs=1))
    for p in ckpt.model.parameters().values():
        p.data[...] = np.float32(3e38)
    with pytest.raises(NonFiniteLossError) as info:
        train(micro_patches(), cfg, resume=ckpt)
    assert info.value.checkpoint.epoch == 1


def test_corrupt_batch_seeding():
    patches = micro_patches()
    fresh = TrainConfig.desk_scale(noise=NoiseSpec.fixed(30))
    a, _ = corrupt_batch(patches, [0, 0], fresh, step=0)
    b, _ = corrupt_batch(patches, [0, 0], fresh, step=1)
    assert not np.array_equal(a[0], a[1]) and not np.array_equal(a[0], b[0])
    fixed = TrainConfig.desk_scale(fresh_noise=False)
    c, truth = corrupt_batch(patches, [1, 1], fixed, step=0)
    d, _ = corrupt_batch(patches, [1], fixed, step=7)
    np.testing.assert_array_equal(c[0], c[1])
    np.testing.assert_array_equal(c[0], d[0])
    assert np.allclose(truth, 30 / 255)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    ckpt = train(micro_patches(), micro_config(epochs=1))
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert checkpoint_bytes(back) == checkpoint_bytes(ckpt)
    assert back.epoch == 1 and back.loss_history == ckpt.loss_history
    assert back.adam.t == ckpt.adam.t
    y = Tensor(synth_cube(5, 1, 8, 8).data)
    np.testing.assert_array_equal(back.model(y)[0].data, ckpt.model(y)[0].data)
    assert not (tmp_path / "m.ckpt.tmp").exists()


def test_checkpoint_errors_are_distinct():
    raw = checkpoint_bytes(initial_checkpoint(micro_config()))
    with pytest.raises(BadCheckpointMagicError):
        parse_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointVersionError):
        parse_checkpoint(raw[:4] + np.uint32(9).tobytes() + raw[8:])
    with pytest.raises(TruncatedCheckpointError):
        parse_checkpoint(raw[:-5])
    bogus = b"nope.w"
    extra = np.uint32(len(bogus)).tobytes() + bogus + np.uint32(0).tobytes() + np.float32(1).tobytes()
    with pytest.raises(UnknownParameterError):
        parse_checkpoint(raw + extra)


def test_failed_load_leaves_existing_model_untouched(tmp_path):
    ckpt = initial_checkpoint(micro_config())
    before = {k: p.data.copy() for k, p in ckpt.model.parameters().items()}
    (tmp_path / "bad.ckpt").write_bytes(b"JUNK" + checkpoint_bytes(ckpt)[4:])
    with pytest.raises(BadCheckpointMagicError):
        load_checkpoint(tmp_path / "bad.ckpt")
    for k, p in ckpt.model.parameters().items():
        np.testing.assert_array_equal(p.data, before[k])
