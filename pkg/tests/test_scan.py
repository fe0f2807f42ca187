import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvodmr.fitting import fit_lorentzians, seed_dips, detect_dips
from nvodmr.scan import (CHANNELS, ChannelConfig, Phantom, PSFConfig, TileConfig, TileImage,
                         channel, composite, excitation_weight, loglog_slope, odmr_at_point,
                         point_signal, power_series, render, scan_tile, stitch, tile_grid)
from nvodmr.signal_chain import DipSpec, LockinConfig, SweepConfig

import oracles

PSF = PSFConfig()
VOX = (0.2, 0.2, 0.5)


def uniform_phantom(n=(60, 60, 30), value=1.0, name="2PEF"):
    ph = Phantom(n, VOX)
    ph.add_density(name, np.ones(ph.dims, bool), value)
    return ph


def aligned_tile(x0, y0, pixels=20, z=7.5, overlap=0.0):
    return TileConfig(pixels * VOX[0], pixels, z, (x0, y0), overlap)


def test_channels():
    assert {c.name: c.power_exponent for c in CHANNELS.values()} == \
        {"2PEF": 2, "SHG": 2, "THG": 3, "3PEF": 3}
    assert channel("3PEF").color == (0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        channel("CARS")
    with pytest.raises(ValueError):
        ChannelConfig("X", 4, (1, 1, 1))


def test_config_validation():
    with pytest.raises(ValueError):
        PSFConfig(0, 1)
    with pytest.raises(ValueError):
        TileConfig(fov=0)
    with pytest.raises(ValueError):
        TileConfig(overlap=0.5)
    with pytest.raises(ValueError):
        TileImage(np.zeros((3, 3)), "2PEF", TileConfig(pixels=4))


def test_phantom_validation():
    with pytest.raises(ValueError):
        Phantom((0, 1, 1))
    ph = Phantom((4, 4, 4))
    with pytest.raises(ValueError):
        ph.add_density("2PEF", np.ones(ph.dims, bool), -1.0)
    with pytest.raises(ValueError):
        ph.add_point("2PEF", (5.0, 0.1, 0.1), 1.0)
    m = ph.box_mask((0, 0, 0), (0.4, 0.4, 0.4))
    ph.add_odmr_region(m, [DipSpec(2870, 10, 0.1)])
    with pytest.raises(ValueError):
        ph.add_odmr_region(m, [DipSpec(2870, 10, 0.1)])
    with pytest.raises(ValueError):
        Phantom((2, 2, 2), channels={"2PEF": np.ones((3, 3, 3))})


def test_excitation_weight_examples():
    assert excitation_weight(PSF, (0, 0, 0)) == 1.0
    assert excitation_weight(PSF, (0.285, 0, 0)) == pytest.approx(0.5, rel=1e-12)
    assert excitation_weight(PSF, (0, 0, 1.975)) == pytest.approx(0.5, rel=1e-12)
    w = excitation_weight(PSF, (0, 0, 4.0))
    assert w == pytest.approx(2.0 ** (-4 * (4 / 3.95) ** 2), rel=1e-12)
    assert w == pytest.approx(0.057, abs=0.002)


def test_uniform_density_value_and_power_law():
    ph = uniform_phantom(value=0.7)
    tile = aligned_tile(4.0, 4.0)
    img = scan_tile(ph, "2PEF", PSF, tile, 1.5).pixels
    # constant PSF sum for a focus on a voxel centre
    def w1(c, t, fwhm):
        d = c - t
        w = np.exp(-4 * math.log(2) * d * d / fwhm ** 2)
        w[np.abs(d) > 4 * fwhm / (2 * math.sqrt(2 * math.log(2)))] = 0
        return w.sum()
    xs, ys = tile.pixel_centers()
    W = (w1(ph.centers(0), xs[0], 0.57) * w1(ph.centers(1), ys[0], 0.57)
         * w1(ph.centers(2), 7.5, 3.95))
    np.testing.assert_allclose(img, 0.7 * 1.5 ** 2 * W, rtol=1e-12)
    img2 = scan_tile(ph, "2PEF", PSF, tile, 3.0).pixels
    np.testing.assert_allclose(img2, 4 * img, rtol=1e-12)


def emitter_phantom():
    ph = Phantom((61, 61, 101), (0.05, 0.05, 0.1))
    ph.add_point("2PEF", (1.525, 1.525, 5.05), 1.0)
    return ph


def test_single_emitter_resolution():
    ph = emitter_phantom()
    xs = ph.centers(0)
    img = render(ph, ph.density("2PEF"), PSF, xs, np.array([1.525]), 5.05)[0]
    assert xs[np.argmax(img)] == pytest.approx(1.525)
    lateral = oracles.fwhm_of_samples(xs, img)
    assert abs(lateral - 0.57) <= max(0.05 * 0.57, 2 * 0.05)
    zs = np.linspace(0.05, 10.05, 201)
    axial = [render(ph, ph.density("2PEF"), PSF, np.array([1.525]), np.array([1.525]), z)[0, 0]
             for z in zs]
    assert abs(oracles.fwhm_of_samples(zs, axial) / 3.95 - 1) < 0.05


def test_optical_sectioning():
    ph = emitter_phantom()
    grid = ph.density("2PEF")
    at = render(ph, grid, PSF, [1.525], [1.525], 5.05)[0, 0]
    off = render(ph, grid, PSF, [1.525], [1.525], 5.05 - 4.0)[0, 0]
    assert off / at == pytest.approx(excitation_weight(PSF, (0, 0, 4.0)), rel=1e-9)


def test_scan_noise_is_seeded():
    ph = uniform_phantom()
    a = scan_tile(ph, "2PEF", PSF, aligned_tile(4, 4), 1.0, noise_sigma=0.05, seed=9).pixels
    b = scan_tile(ph, "2PEF", PSF, aligned_tile(4, 4), 1.0, noise_sigma=0.05, seed=9).pixels
    np.testing.assert_array_equal(a, b)
    assert np.all(a >= 0)


def test_power_series_examples():
    ph = uniform_phantom(name="THG")
    ph.add_density("2PEF", np.ones(ph.dims, bool), 1.0)
    p = (6.0, 6.0, 7.5)
    s2 = power_series(ph, p, "2PEF", [1, 2, 4])
    np.testing.assert_allclose(s2 / s2[0], [1, 4, 16], rtol=1e-12)
    assert loglog_slope([1, 2, 4], s2) == pytest.approx(2.0, abs=1e-9)
    s3 = power_series(ph, p, "THG", [1, 2, 4])
    assert s3[1] / s3[0] == pytest.approx(8.0, rel=1e-12)
    noisy = power_series(ph, p, "2PEF", np.linspace(1, 10, 10), noise_sigma=0.01, seed=0)
    assert abs(loglog_slope(np.linspace(1, 10, 10), noisy) - 2.0) < 0.05
    with pytest.raises(ValueError):
        power_series(ph, p, "2PEF", [1, 2])
    with pytest.raises(ValueError):
        power_series(ph, p, "2PEF", [1, 2, 0])


GRAIN_DIPS = [DipSpec(2866.0, 20.0, 0.04), DipSpec(2874.0, 20.0, 0.04)]


def grains_phantom():
    ph = Phantom((80, 30, 30), VOX)
    a = ph.sphere_mask((4.0, 3.0, 7.5), 2.5)
    b = ph.sphere_mask((12.0, 3.0, 7.5), 2.5)
    ph.add_density("2PEF", a, 1.0)
    ph.add_density("2PEF", b, 1.0)
    ph.add_odmr_region(a, GRAIN_DIPS)
    return ph


def test_odmr_inside_region():
    trace = odmr_at_point(grains_phantom(), (4.0, 3.0, 7.5), SweepConfig(), LockinConfig())
    eff = trace.meta["effective_dips"]
    assert [c for _, _, c in eff] == pytest.approx([0.04, 0.04], rel=1e-12)
    fit = fit_lorentzians(trace, seed_dips(detect_dips(trace), 2, trace), 1.0)
    assert abs((fit.dips[1].f0 - fit.dips[0].f0) - 8.0) < 0.5
    for d in fit.dips:
        assert d.contrast == pytest.approx(0.04, rel=0.1)


def test_odmr_nv0_grain_is_flat():
    trace = odmr_at_point(grains_phantom(), (12.0, 3.0, 7.5), SweepConfig(), LockinConfig())
    np.testing.assert_allclose(trace.signal, 1.0, atol=1e-12)


def test_odmr_mixing_halves_contrast():
    ph = Phantom((41, 11, 30), VOX)
    ph.add_point("2PEF", (3.9, 1.1, 7.25), 1.0)
    ph.add_point("2PEF", (4.3, 1.1, 7.25), 1.0)
    region = np.zeros(ph.dims, bool)
    region[19, 5, 14] = True
    ph.add_odmr_region(region, GRAIN_DIPS)
    trace = odmr_at_point(ph, (4.1, 1.1, 7.25), SweepConfig(n_points=64), LockinConfig())
    for _, _, c in trace.meta["effective_dips"]:
        assert c == pytest.approx(0.02, rel=1e-12)


def test_odmr_locality():
    ph = Phantom((20, 20, 60), VOX)
    ph.add_density("2PEF", np.ones(ph.dims, bool), 1.0)
    ph.add_odmr_region(ph.box_mask((0, 0, 6.0), (4, 4, 9.0)), GRAIN_DIPS)
    sw, lk = SweepConfig(n_points=64), LockinConfig()
    near = odmr_at_point(ph, (2.0, 2.0, 7.5), sw, lk)
    far = odmr_at_point(ph, (2.0, 2.0, 7.5 + 3 * 3.95), sw, lk)
    c_near = sum(c for _, _, c in near.meta["effective_dips"])
    c_far = sum(c for _, _, c in far.meta["effective_dips"])
    assert c_far <= 0.01 * c_near


def test_odmr_no_signal_is_error():
    with pytest.raises(ValueError):
        odmr_at_point(Phantom((5, 5, 5)), (0.5, 0.5, 1.0), SweepConfig(), LockinConfig())


def test_stitch_single_tile_identity():
    ph = uniform_phantom()
    t = scan_tile(ph, "2PEF", PSF, aligned_tile(4, 4), 1.0)
    mosaic = stitch([t])
    np.testing.assert_array_equal(mosaic.image, t.pixels)
    assert mosaic.origin == (4, 4)


def test_stitch_uniform_two_tiles():
    ph = uniform_phantom()
    tiles = tile_grid(2, 1, fov=4.0, pixels=20, overlap=0.1, focus_z=7.5, origin=(2.0, 2.0))
    mosaic = stitch([scan_tile(ph, "2PEF", PSF, t, 1.0) for t in tiles])
    assert mosaic.image.shape == (20, 38)
    img = mosaic.image
    assert (img.max() - img.min()) / img.mean() < 1e-9


def test_stitch_emitter_in_overlap():
    ph = Phantom((60, 60, 30), VOX)
    ph.add_point("2PEF", (5.7, 4.1, 7.5), 1.0)
    tiles = tile_grid(2, 1, fov=4.0, pixels=20, overlap=0.1, focus_z=7.5, origin=(2.0, 2.0))
    imgs = [scan_tile(ph, "2PEF", PSF, t, 1.0) for t in tiles]
    mosaic = stitch(imgs)
    iy, ix = np.unravel_index(np.argmax(mosaic.image), mosaic.image.shape)
    assert mosaic.origin[0] + (ix + 0.5) * mosaic.pitch == pytest.approx(5.7)
    assert mosaic.origin[1] + (iy + 0.5) * mosaic.pitch == pytest.approx(4.1)
    single = scan_tile(ph, "2PEF", PSF, aligned_tile(4.0, 2.0), 1.0).pixels
    assert abs(mosaic.image.max() - single.max()) <= 1e-9 * single.max()
    # appears once: one local maximum above half height
    assert np.sum(mosaic.image > 0.5 * mosaic.image.max()) == np.sum(single > 0.5 * single.max())


def test_stitch_errors():
    a = TileImage(np.ones((4, 4)), "2PEF", TileConfig(0.8, 4, 0, (0, 0)))
    b = TileImage(np.ones((4, 4)), "2PEF", TileConfig(1.0, 4, 0, (0.5, 0)))
    with pytest.raises(ValueError):
        stitch([a, b])
    c = TileImage(np.ones((4, 4)), "2PEF", TileConfig(0.8, 4, 0, (0.3, 0)))
    with pytest.raises(ValueError):
        stitch([a, c])
    with pytest.raises(ValueError):
        stitch([])


@settings(max_examples=15)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(5, 30), st.integers(5, 30))
def test_stitch_partition_idempotent(x0, y0, w, h):
    rng = np.random.default_rng(x0 * 1000 + y0)
    big = rng.random((40, 40))
    pitch = 0.25
    parts = []
    for ox, oy in ((0, 0), (x0, y0), (40 - w, 40 - h)):
        n = min(w, h, 40 - ox, 40 - oy)
        if n < 1:
            continue
        tc = TileConfig(n * pitch, n, 0.0, (ox * pitch, oy * pitch))
        parts.append(TileImage(big[oy:oy + n, ox:ox + n].copy(), "2PEF", tc))
    full = TileImage(big, "2PEF", TileConfig(40 * pitch, 40, 0.0, (0.0, 0.0)))
    mosaic = stitch([full] + parts)
    np.testing.assert_allclose(mosaic.image, big, rtol=1e-12)


def test_composite_examples():
    z = np.zeros((3, 3))
    red = composite({"2PEF": np.eye(3), "SHG": z, "THG": z})
    assert np.all(red[..., 1:] == 0) and red[..., 0].max() == 1
    white = composite({"2PEF": np.ones((2, 2)) + np.eye(2), "SHG": np.ones((2, 2)) + np.eye(2),
                       "THG": np.ones((2, 2)) + np.eye(2)})
    np.testing.assert_array_equal(white[0, 0], [1, 1, 1])
    np.testing.assert_array_equal(composite({"2PEF": z, "3PEF": z}), 0)
    with pytest.raises(ValueError):
        composite({"2PEF": z, "SHG": np.zeros((2, 2))})
    with pytest.raises(ValueError):
        composite({})


@settings(max_examples=15)
@given(st.floats(0.01, 100))
def test_linearity_in_density(k):
    ph = Phantom((30, 30, 30), VOX)
    rng = np.random.default_rng(0)
    ph.channels["SHG"] = rng.random(ph.dims)
    a = scan_tile(ph, "SHG", PSF, aligned_tile(1, 1), 1.0).pixels
    ph.channels["SHG"] = ph.channels["SHG"] * k
    b = scan_tile(ph, "SHG", PSF, aligned_tile(1, 1), 1.0).pixels
    np.testing.assert_allclose(b, k * a, rtol=1e-12)


@settings(max_examples=10)
@given(st.integers(1, 8), st.integers(1, 8))
def test_translation_equivariance(sx, sy):
    rng = np.random.default_rng(sx + 10 * sy)
    ph = Phantom((60, 60, 30), VOX)
    ph.channels["2PEF"] = np.zeros(ph.dims)
    ph.channels["2PEF"][15:35, 15:35, :] = rng.random((20, 20, 30))
    moved = Phantom((60, 60, 30), VOX)
    moved.channels["2PEF"] = np.roll(ph.channels["2PEF"], (sx, sy), axis=(0, 1))
    tile = aligned_tile(1.0, 1.0, pixels=50)
    a = scan_tile(ph, "2PEF", PSF, tile, 1.0).pixels
    b = scan_tile(moved, "2PEF", PSF, tile, 1.0).pixels
    np.testing.assert_allclose(b[sy:, sx:], a[:50 - sy, :50 - sx], rtol=1e-10, atol=1e-12)


def test_point_signal_matches_direct_sum():
    ph = Phantom((12, 12, 20), VOX)
    rng = np.random.default_rng(1)
    ph.channels["3PEF"] = rng.random(ph.dims)
    p = (1.3, 1.1, 4.9)
    direct = 0.0
    for i, x in enumerate(ph.centers(0)):
        for j, y in enumerate(ph.centers(1)):
            for k, z in enumerate(ph.centers(2)):
                d = (x - p[0], y - p[1], z - p[2])
                sig = (0.57 / 2.3548200450309493, 3.95 / 2.3548200450309493)
                if abs(d[0]) > 4 * sig[0] or abs(d[1]) > 4 * sig[0] or abs(d[2]) > 4 * sig[1]:
                    continue
                direct += ph.channels["3PEF"][i, j, k] * excitation_weight(PSF, d)
    assert point_signal(ph, p, "3PEF", PSF, 2.0) == pytest.approx(8 * direct, rel=1e-12)
