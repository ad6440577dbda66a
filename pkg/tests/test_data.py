import numpy as np
import pytest
from scipy import stats

from msdnet.data import (
    BadMagicError,
    DimensionOverflowError,
    HsiCube,
    NoiseSpec,
    TruncatedPayloadError,
    UnsupportedVersionError,
    add_awgn,
    export_band_pgm,
    extract_patches,
    load_cube,
    parse_cube,
    read_pgm,
    save_cube,
    synth_cube,
)
from msdnet.metrics import psnr


def test_hsif_round_trip(tmp_path):
    cube = synth_cube(3, 4, 9, 7)
    save_cube(cube, tmp_path / "c.hsif")
    back = load_cube(tmp_path / "c.hsif")
    assert back.shape == cube.shape
    np.testing.assert_array_equal(back.data, cube.data)


def test_hsif_minimal_cube(tmp_path):
    cube = HsiCube(np.array([[[0.25]]]))
    save_cube(cube, tmp_path / "one.hsif")
    assert load_cube(tmp_path / "one.hsif").data[0, 0, 0] == np.float32(0.25)


def test_hsif_layout_is_little_endian_band_major(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    save_cube(HsiCube(data), tmp_path / "c.hsif")
    raw = (tmp_path / "c.hsif").read_bytes()
    assert raw[:4] == b"HSIF"
    assert np.frombuffer(raw[4:20], "<u4").tolist() == [1, 2, 2, 3]
    assert np.frombuffer(raw[20:], "<f4").tolist() == list(range(12))


def test_hsif_errors_are_distinct(tmp_path):
    save_cube(synth_cube(0, 2, 4, 4), tmp_path / "c.hsif")
    raw = (tmp_path / "c.hsif").read_bytes()
    with pytest.raises(BadMagicError):
        parse_cube(b"XXXX" + raw[4:])
    with pytest.raises(TruncatedPayloadError):
        parse_cube(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        parse_cube(raw[:10])
    with pytest.raises(UnsupportedVersionError):
        parse_cube(raw[:4] + np.uint32(2).tobytes() + raw[8:])
    huge = raw[:8] + np.array([65535, 65535, 65535], "<u4").tobytes()
    with pytest.raises(DimensionOverflowError):
        parse_cube(huge)


def test_synth_is_deterministic_and_bounded():
    a, b = synth_cube(0, 6, 16, 16), synth_cube(0, 6, 16, 16)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, synth_cube(1, 6, 16, 16).data)
    for seed in range(5):
        c = synth_cube(seed, 3, 12, 20)
        assert c.data.min() >= 0.05 and c.data.max() <= 0.95


def test_synth_adjacent_band_correlation():
    cube = synth_cube(0, 8, 32, 32)
    corr = [np.corrcoef(cube.data[i].ravel(), cube.data[i + 1].ravel())[0, 1] for i in range(7)]
    assert np.mean(corr) > 0.9


def test_extract_patches():
    cube = synth_cube(0, 2, 128, 128)
    assert len(extract_patches(cube, 64, 64)) == 4
    single = extract_patches(synth_cube(0, 2, 16, 16), 16)
    assert len(single) == 1
    np.testing.assert_array_equal(single[0].data, synth_cube(0, 2, 16, 16).data)
    with pytest.raises(ValueError):
        extract_patches(cube, 200)


def test_extract_patches_count_and_tiling():
    cube = synth_cube(1, 3, 40, 56)
    patches = extract_patches(cube, 16, 8)
    assert len(patches) == ((40 - 16) // 8 + 1) * ((56 - 16) // 8 + 1)
    tiles = extract_patches(cube.__class__(cube.data[:, :32, :48]), 16, 16)
    rows = [np.concatenate([t.data for t in tiles[r * 3:(r + 1) * 3]], axis=2) for r in range(2)]
    np.testing.assert_array_equal(np.concatenate(rows, axis=1), cube.data[:, :32, :48])


def test_awgn_zero_sigma_is_identity():
    cube = synth_cube(0, 3, 8, 8)
    noisy, truth = add_awgn(cube, NoiseSpec.fixed(0.0, seed=5))
    np.testing.assert_array_equal(noisy.data, cube.data)
    assert np.all(truth.data == 0)


def test_awgn_deterministic_per_seed():
    cube = synth_cube(0, 3, 16, 16)
    for spec in (NoiseSpec.fixed(30, seed=9), NoiseSpec.blind(10, 70, seed=9)):
        a, ta = add_awgn(cube, spec)
        b, tb = add_awgn(cube, spec)
        np.testing.assert_array_equal(a.data, b.data)
        np.testing.assert_array_equal(ta.data, tb.data)
    c, _ = add_awgn(cube, NoiseSpec.fixed(30, seed=10))
    assert not np.array_equal(c.data, add_awgn(cube, NoiseSpec.fixed(30, seed=9))[0].data)


def test_awgn_is_not_clipped():
    cube = HsiCube(np.full((1, 32, 32), 0.95))
    noisy, _ = add_awgn(cube, NoiseSpec.fixed(70, seed=0))
    assert noisy.data.max() > 1.0


@pytest.mark.parametrize("sigma,expected,tol", [(30, 18.59, 0.15), (50, 14.16, 0.15), (70, 11.23, 0.2)])
def test_awgn_psnr_matches_noisy_baseline(sigma, expected, tol):
    cube = synth_cube(0, 8, 64, 64)
    noisy, _ = add_awgn(cube, NoiseSpec.fixed(sigma, seed=1))
    assert abs(psnr(cube, noisy) - expected) <= tol
    assert abs(psnr(cube, noisy) - 20 * np.log10(255 / sigma)) <= 0.2


def test_awgn_band_std_tracks_truth():
    cube = synth_cube(2, 6, 64, 64)
    noisy, truth = add_awgn(cube, NoiseSpec.blind(10, 70, seed=3))
    resid = noisy.data.astype(np.float64) - cube.data
    for b in range(6):
        target = truth.data[b, 0, 0]
        assert np.all(truth.data[b] == target)
        assert abs(resid[b].std() / target - 1) < 0.03


def test_blind_sigmas_are_uniform():
    cube = HsiCube(np.full((1000, 1, 1), 0.5))
    _, truth = add_awgn(cube, NoiseSpec.blind(10, 70, seed=11))
    sig = truth.data[:, 0, 0].astype(np.float64) * 255
    assert sig.min() >= 10 - 1e-3 and sig.max() <= 70 + 1e-3
    assert stats.kstest(sig, stats.uniform(loc=10, scale=60).cdf).pvalue > 0.01


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec.fixed(-1)
    with pytest.raises(ValueError):
        NoiseSpec.blind(50, 10)


def test_pgm_export(tmp_path):
    zeros = HsiCube(np.zeros((2, 3, 4)))
    export_band_pgm(zeros, 1, tmp_path / "z.pgm")
    assert (tmp_path / "z.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
    assert np.all(read_pgm(tmp_path / "z.pgm") == 0)
    export_band_pgm(HsiCube(np.ones((1, 3, 4))), 0, tmp_path / "o.pgm")
    assert np.all(read_pgm(tmp_path / "o.pgm") == 255)
    export_band_pgm(HsiCube(np.array([[[0.5, -1.0, 2.0]]])), 0, tmp_path / "h.pgm")
    assert read_pgm(tmp_path / "h.pgm").tolist() == [[128, 0, 255]]
    with pytest.raises(IndexError):
        export_band_pgm(zeros, 2, tmp_path / "bad.pgm")
