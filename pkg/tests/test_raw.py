import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawdistill.raw import (
    BayerImage,
    BayerStats,
    add_gaussian_noise,
    bayer_normalize,
    bilinear_fill,
    channel_masks,
    compute_bayer_stats,
    mosaic,
    quantize16,
    read_pgm16,
    read_pgm8,
    read_ppm,
    simulate_short_exposure,
    write_pgm16,
    write_pgm8,
    write_ppm,
)
from rawdistill.tensor import ContractError


def const_rgb(r, g, b, h=2, w=2):
    return np.stack([np.full((h, w), v, dtype=np.float32) for v in (r, g, b)])


def fill_oracle(m):
    """Same-channel 3x3 neighbour mean, written as explicit loops."""
    h, w = m.shape
    chan = np.empty((h, w), dtype=int)
    for i in range(h):
        for j in range(w):
            chan[i, j] = 0 if (i % 2, j % 2) == (0, 0) else 2 if (i % 2, j % 2) == (1, 1) else 1
    out = np.zeros((3, h, w))
    for c in range(3):
        for i in range(h):
            for j in range(w):
                if chan[i, j] == c:
                    out[c, i, j] = m[i, j]
                    continue
                vals = [m[a, b] for a in range(i - 1, i + 2) for b in range(j - 1, j + 2)
                        if 0 <= a < h and 0 <= b < w and chan[a, b] == c]
                out[c, i, j] = np.mean(vals)
    return out


def test_mosaic_constant_colour_cell():
    np.testing.assert_array_equal(mosaic(const_rgb(0.1, 0.5, 0.9)).values, np.float32([[0.1, 0.5], [0.5, 0.9]]))


def test_mosaic_gray_is_constant():
    assert np.all(mosaic(const_rgb(0.4, 0.4, 0.4, 6, 8)).values == np.float32(0.4))


def test_mosaic_positionwise():
    rgb = np.random.default_rng(0).random((3, 4, 4)).astype(np.float32)
    m = mosaic(rgb).values
    for i in range(4):
        for j in range(4):
            ch = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}[(i % 2, j % 2)]
            assert m[i, j] == rgb[ch, i, j]


def test_mosaic_odd_dims_rejected():
    with pytest.raises(ContractError):
        mosaic(np.zeros((3, 3, 4)))
    with pytest.raises(ContractError):
        BayerImage(np.zeros((4, 5)))


def test_gaussian_noise_examples():
    img = mosaic(np.random.default_rng(1).random((3, 8, 8)))
    assert add_gaussian_noise(img, 0.0, 3) == img
    assert add_gaussian_noise(img, 0.2, 3).values.tobytes() == add_gaussian_noise(img, 0.2, 3).values.tobytes()
    assert add_gaussian_noise(img, 0.2, 3) != add_gaussian_noise(img, 0.2, 4)
    loud = add_gaussian_noise(img, 10.0, 5).values
    assert loud.min() >= 0.0 and loud.max() <= 1.0
    with pytest.raises(ContractError):
        add_gaussian_noise(img, -0.1, 0)


def test_short_exposure_identity_limit_and_scaling():
    rgb = np.random.default_rng(2).random((3, 6, 6)).astype(np.float32)
    assert simulate_short_exposure(rgb, 1.0, 0.0, 0.0, 0) == mosaic(rgb)
    dark = simulate_short_exposure(const_rgb(0.8, 0.8, 0.8, 4, 4), 0.1, 0.0, 0.0, 0)
    np.testing.assert_allclose(dark.values, 0.08, rtol=1e-6)
    assert dark.exposure_ratio == 0.1
    for bad in (0.0, 1.5, -0.2):
        with pytest.raises(ContractError):
            simulate_short_exposure(rgb, bad, 0.0, 0.0, 0)


def test_short_exposure_variance_grows_with_signal():
    # columns of increasing brightness; one draw per seed, 10^4 seeds
    # signals stay a few sigma away from the clip bounds
    levels = np.array([0.4, 0.6, 0.8, 1.0], dtype=np.float32)
    rgb = np.broadcast_to(np.repeat(levels, 2)[None, None, :], (3, 2, 8)).copy()
    ratio, read_std, shot = 0.5, 0.01, 0.02
    draws = np.stack([simulate_short_exposure(rgb, ratio, read_std, shot, s).values for s in range(10_000)])
    var = draws.var(axis=0).reshape(2, 4, 2).mean(axis=(0, 2))
    expected = shot * levels * ratio + read_std**2
    assert np.all(np.diff(var) > 0)
    np.testing.assert_allclose(var, expected, rtol=0.1)


def test_short_exposure_mean_scales_exactly_without_noise():
    rgb = np.random.default_rng(4).random((3, 8, 8)).astype(np.float32)
    out = simulate_short_exposure(rgb, 0.25, 0.0, 0.0, 0).values
    np.testing.assert_array_equal(out, mosaic(rgb).values * np.float32(0.25))


def test_bilinear_fill_constant_and_2x2():
    np.testing.assert_allclose(bilinear_fill(BayerImage(np.full((6, 6), 0.3))), 0.3, rtol=1e-6)
    out = bilinear_fill(BayerImage(np.array([[1.0, 0.5], [0.5, 0.0]])))
    assert out[:, 0, 0].tolist() == [1.0, 0.5, 0.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 5))
def test_bilinear_fill_matches_loop_oracle(seed, hh, ww):
    m = np.random.default_rng(seed).random((2 * hh, 2 * ww)).astype(np.float32)
    np.testing.assert_allclose(bilinear_fill(BayerImage(m)), fill_oracle(m), rtol=1e-6, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mosaic_fill_round_trip(seed):
    rng = np.random.default_rng(seed)
    rgb = rng.random((3, 8, 10)).astype(np.float32)
    filled = bilinear_fill(mosaic(rgb))
    for ch, mask in enumerate(channel_masks(8, 10)):
        assert np.array_equal(filled[ch][mask], rgb[ch][mask])
    c = rng.random(3).astype(np.float32)
    flat = const_rgb(*c, 8, 10)
    assert np.array_equal(bilinear_fill(mosaic(flat)), flat)


def test_bayer_stats_examples():
    s = compute_bayer_stats([BayerImage(np.full((4, 4), 0.3))])
    np.testing.assert_allclose(s.means, 0.3, rtol=1e-6)
    np.testing.assert_allclose([s.std_r, s.std_g, s.std_b], 0.0, atol=1e-7)
    s = compute_bayer_stats([BayerImage(np.zeros((4, 4))), BayerImage(np.ones((4, 4)))])
    assert s.means.tolist() == [0.5] * 3
    assert [s.std_r, s.std_g, s.std_b] == [0.5] * 3
    assert s.sample_count == 2
    with pytest.raises(ValueError):
        compute_bayer_stats([])


def test_bayer_stats_pool_green_sites_and_ignore_order():
    rng = np.random.default_rng(7)
    imgs = [BayerImage(rng.random((4, 6))) for _ in range(5)]
    s = compute_bayer_stats(imgs)
    g = np.concatenate([im.values[channel_masks(4, 6)[1]] for im in imgs]).astype(np.float64)
    assert s.mean_g == pytest.approx(g.mean(), rel=1e-12)
    assert s.std_g == pytest.approx(g.std(), rel=1e-12)
    shuffled = compute_bayer_stats(imgs[::-1])
    for name in ("mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b"):
        assert getattr(shuffled, name) == pytest.approx(getattr(s, name), rel=1e-12)


def test_normalize_examples():
    stats = BayerStats(0.2, 0.5, 0.7, 0.1, 0.25, 0.3, 1)
    x = np.broadcast_to(stats.means[:, None, None], (3, 4, 4))
    assert np.all(bayer_normalize(x, stats) == 0)
    one = bayer_normalize(np.ones((3, 1, 1)), stats)
    assert one[1, 0, 0] == pytest.approx(2.0)
    zero_std = BayerStats(0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 1)
    out = bayer_normalize(np.ones((2, 3, 2, 2)), zero_std)
    assert np.all(np.isfinite(out)) and out[0, 0, 0, 0] == pytest.approx(0.5 / 1e-6, rel=1e-5)


def test_netpbm_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    rgb = np.round(rng.random((3, 6, 4)) * 255) / 255
    write_ppm(tmp_path / "a.ppm", rgb)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), rgb.astype(np.float32))
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n4 6\n255\n")

    raw = quantize16(rng.random((6, 4)))
    write_pgm16(tmp_path / "b.pgm", raw)
    np.testing.assert_array_equal(read_pgm16(tmp_path / "b.pgm"), raw)
    blob = (tmp_path / "b.pgm").read_bytes()
    header = b"P5\n4 6\n65535\n"
    first = int(round(float(raw[0, 0]) * 65535))
    assert blob[len(header):len(header) + 2] == first.to_bytes(2, "big")

    mask = rng.integers(0, 11, (6, 4))
    write_pgm8(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(read_pgm8(tmp_path / "m.pgm"), mask)


def test_netpbm_rejects_truncated_and_wrong_magic(tmp_path):
    write_pgm16(tmp_path / "b.pgm", np.zeros((4, 4)))
    blob = (tmp_path / "b.pgm").read_bytes()
    (tmp_path / "t.pgm").write_bytes(blob[:-3])
    with pytest.raises(ValueError):
        read_pgm16(tmp_path / "t.pgm")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "b.pgm")
