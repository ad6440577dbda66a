"""Acceptance criteria, one test each, each printing a single PASS/FAIL verdict.

The training smoke run (criteria 5 and 6) is the slow part: about three
minutes on one core.
"""
import math
import time

import numpy as np
import pytest

from msdnet.autodiff import Tensor
from msdnet.cli import main
from msdnet.data import HsiCube, NoiseSpec, add_awgn, save_cube, synth_cube
from msdnet.losses import asymmetric_loss, mse_loss
from msdnet.metrics import psnr, sam, ssim
from msdnet.model import denoise_cube
from msdnet.training import load_checkpoint
from msdnet.unet import UNetConfig, denoise, init_unet
from msdnet.verify import GRAD_TOL, grads_suite, oracles_suite

from conftest import record_verdict

SMOKE_CFG = """\
# one 1-band 32x32 patch, four noisy copies per step, 200 steps
batch_size = 4
epochs = 200
patch_size = 32
sigma = 30
noise_mode = fixed
seed = 0
"""


def verdict(number, title, passed, detail):
    record_verdict(number, title, passed, detail)
    assert passed, detail


def test_criterion_1_noisy_baseline_psnr():
    worst = 0.0
    cubes = [synth_cube(0, 8, 64, 64),
             HsiCube(np.random.default_rng(1).uniform(size=(8, 64, 64))),
             HsiCube(np.full((4, 64, 64), 0.5))]
    rows = []
    for sigma, anchor in ((30, 18.59), (50, 14.16), (70, 11.23)):
        for i, cube in enumerate(cubes):
            value = psnr(cube, add_awgn(cube, NoiseSpec.fixed(sigma, seed=10 + i))[0])
            worst = max(worst, abs(value - anchor))
            rows.append(f"{value:.2f}")
    verdict(1, "noisy-baseline PSNR 18.59/14.16/11.23 within 0.2 dB", worst <= 0.2,
            f"max deviation {worst:.3f} dB over {len(rows)} cube/sigma pairs")


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    checks = grads_suite(seed=0)
    elapsed = time.perf_counter() - start
    grad_checks = [c for c in checks if "coverage" not in c.name]
    worst = max(c.value for c in grad_checks)
    composite = [c for c in grad_checks if "composite" in c.name]
    passed = (all(c.passed for c in checks) and len(grad_checks) >= 20 and composite
              and worst < GRAD_TOL and elapsed < 120)
    verdict(2, "gradient suite below 1e-4 relative error", passed,
            f"{len(grad_checks)} seeded checks incl. {len(composite)} composite, worst {worst:.2e}, "
            f"{elapsed:.1f}s")


def test_criterion_3_oracle_suite():
    start = time.perf_counter()
    checks = oracles_suite(seed=0)
    elapsed = time.perf_counter() - start
    failed = [c.name for c in checks if not c.passed]
    kinds = {c.name.split()[1] for c in checks}
    passed = not failed and {"conv2d", "ssim", "adam"} <= kinds and elapsed < 60
    verdict(3, "conv2d/SSIM/Adam/loss oracles", passed,
            f"{len(checks)} checks, failed {failed or 'none'}, {elapsed:.1f}s")


def test_criterion_4_closed_form_identities():
    truth = Tensor(np.full((2, 8, 8), 0.5))
    under = asymmetric_loss(Tensor(np.full((2, 8, 8), 0.25)), truth).item()
    over = asymmetric_loss(Tensor(np.full((2, 8, 8), 0.75)), truth).item()
    ratio = under / over
    g = Tensor(np.zeros((3, 8, 8)))
    mse = mse_loss(Tensor(g.data + 0.1), g).item()

    params = init_unet(UNetConfig(bands=3), np.random.default_rng(0))
    for t in params.tensors.values():
        t.data[...] = 0
    y = Tensor(np.random.default_rng(1).uniform(size=(3, 16, 16)))
    d = denoise(y, Tensor(np.full((3, 16, 16), 0.1)), params)
    exact = np.array_equal(d.data, y.data)
    passed = ratio == 3.0 and abs(mse - 0.01) < 1e-15 and exact
    verdict(4, "asymmetric ratio 3, mse 0.01, zero-weight denoiser D == Y", passed,
            f"ratio {ratio!r}, mse {mse!r}, D==Y bitwise {exact}")


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("smoke")
    (work / "data").mkdir()
    clean = synth_cube(0, 1, 32, 32)
    save_cube(clean, work / "data" / "patch.hsif")
    (work / "smoke.cfg").write_text(SMOKE_CFG)
    start = time.perf_counter()
    code = main(["train", "--config", str(work / "smoke.cfg"), "--data-dir", str(work / "data"),
                 "--out-checkpoint", str(work / "smoke.ckpt")])
    elapsed = time.perf_counter() - start
    assert code == 0
    return clean, load_checkpoint(work / "smoke.ckpt"), elapsed


def test_criterion_5_training_smoke(smoke_run):
    clean, ckpt, elapsed = smoke_run
    history = ckpt.loss_history
    ratio = history[-1] / history[0]
    noisy, _ = add_awgn(clean, NoiseSpec.fixed(30, seed=123))
    before = psnr(clean, noisy)
    after = psnr(clean, denoise_cube(noisy, ckpt.model))
    finite = all(math.isfinite(x) for x in history)
    passed = len(history) == 200 and finite and ratio < 0.25 and after >= before + 3.0
    verdict(5, "200-step smoke: loss ratio < 0.25 and PSNR gain >= 3 dB", passed,
            f"loss {history[0]:.3f} -> {history[-1]:.3f} (ratio {ratio:.4f}), "
            f"PSNR {before:.2f} -> {after:.2f} dB (+{after - before:.2f}), train {elapsed:.0f}s")


def test_criterion_6_blind_noise_direction(smoke_run):
    clean, ckpt, _ = smoke_run
    gains = []
    for seed in range(5):
        noisy, truth = add_awgn(clean, NoiseSpec.blind(10, 70, seed=seed))
        gains.append((float(truth.data[0, 0, 0] * 255),
                      psnr(clean, denoise_cube(noisy, ckpt.model)) - psnr(clean, noisy)))
    passed = all(g > 0 for _, g in gains)
    detail = ", ".join(f"sigma {s:.0f}: {g:+.2f} dB" for s, g in gains)
    verdict(6, "blind sigma in [10,70]: denoised PSNR above noisy", passed, detail)


def test_criterion_7_determinism(tmp_path):
    (tmp_path / "data").mkdir()
    save_cube(synth_cube(4, 2, 32, 32), tmp_path / "data" / "cube.hsif")
    (tmp_path / "run.cfg").write_text("epochs = 3\nbatch_size = 2\npatch_size = 16\nnoise_mode = blind\n")
    outputs = []
    for run in ("a", "b"):
        ckpt, csv = tmp_path / f"{run}.ckpt", tmp_path / f"{run}.csv"
        assert main(["train", "--config", str(tmp_path / "run.cfg"), "--data-dir", str(tmp_path / "data"),
                     "--out-checkpoint", str(ckpt)]) == 0
        assert main(["evaluate", "--clean", str(tmp_path / "data" / "cube.hsif"), "--checkpoint", str(ckpt),
                     "--blind", "10,70", "--report", str(csv)]) == 0
        outputs.append((ckpt.read_bytes(), csv.read_bytes()))
    same_ckpt = outputs[0][0] == outputs[1][0]
    same_csv = outputs[0][1] == outputs[1][1]
    verdict(7, "train + evaluate twice gives byte-identical checkpoint and CSV", same_ckpt and same_csv,
            f"checkpoint {len(outputs[0][0])} bytes identical={same_ckpt}, csv identical={same_csv}")


def test_criterion_8_metric_properties():
    rng = np.random.default_rng(8)
    a = HsiCube(rng.uniform(size=(4, 24, 24)))
    b = HsiCube(np.clip(a.data + rng.normal(scale=0.1, size=a.shape), 0, 1))
    ssim_self = ssim(a, a)
    scale = rng.uniform(0.5, 2.0, size=(1, 24, 24)).astype(np.float32)
    sam_shift = abs(sam(a, HsiCube(b.data * scale)) - sam(a, b))
    psnr_sym = psnr(a, b) == psnr(b, a)
    ref = np.zeros((2, 8, 8))
    ref[0] = 1
    test = np.zeros((2, 8, 8))
    test[1] = 1
    ortho = abs(sam(HsiCube(ref), HsiCube(test)) - math.pi / 2)
    passed = ssim_self == 1.0 and sam_shift < 1e-6 and psnr_sym and ortho < 1e-12
    verdict(8, "ssim(a,a)=1, SAM scale invariance, PSNR symmetry, orthogonal SAM = pi/2", passed,
            f"ssim(a,a)={ssim_self!r}, SAM shift {sam_shift:.1e}, symmetric={psnr_sym}, "
            f"|SAM-pi/2|={ortho:.1e}")

