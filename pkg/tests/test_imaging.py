from __future__ import annotations

import numpy as np
import pytest

from mmpos.geometry import SPEED_OF_LIGHT, planar_aperture
from mmpos.imaging import (
    ImageGrid,
    ImagingError,
    VoxelImage,
    azimuth_resolution,
    backprojection_oracle,
    check_sampling,
    range_resolution,
    read_point_cloud,
    reconstruct_image,
    resync_phasors,
    stolt_columns,
    stolt_resample,
    threshold_image,
    write_point_cloud,
)

C = SPEED_OF_LIGHT


def phasors(targets, rx, freqs, amps=None, gamma=1.0):
    """Noiseless demodulated SFCW data of isotropic point sources."""
    targets = np.atleast_2d(targets)
    amps = np.ones(len(targets)) if amps is None else np.asarray(amps)
    y = np.zeros((len(rx), len(freqs)), dtype=complex)
    for a, t in zip(amps, targets):
        r = np.linalg.norm(rx - t, axis=1)
        y += a * np.exp(-2j * np.pi * np.outer(r, freqs) / C)
    return gamma * y


def centred_grid(center, spacing, dims):
    center = np.asarray(center, dtype=float)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    origin = center - spacing * (np.asarray(dims) // 2)
    return ImageGrid(tuple(origin), tuple(spacing), tuple(dims))


def voxel_of(grid, p):
    return tuple(np.round((np.asarray(p) - grid.origin) / grid.spacing).astype(int))


@pytest.fixture(scope="module")
def nyquist_setup():
    """16 x 16 receivers at 2.5 mm (under c / 2 f_c) and 64 tones over 3 GHz."""
    rx, xs, ys = planar_aperture((0, 0, 0), 0.0375, 0.0375, 16, 16)
    freqs = 57e9 + np.arange(64) * (3e9 / 63)
    return rx, xs, ys, freqs


# --- resynchronisation ----------------------------------------------------

def test_resync_identity_and_inverse(rng):
    freqs = 57e9 + np.arange(8) * 5.86e6
    y = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
    assert np.allclose(resync_phasors(y, freqs, 1e-8, 1e-8), y, rtol=0, atol=0)
    back = resync_phasors(resync_phasors(y, freqs, 2.3e-8, 0.0), freqs, 0.0, 2.3e-8)
    assert np.allclose(back, y, rtol=0, atol=1e-12)


def test_resync_leaves_pure_flight_phase():
    freqs = 57e9 + np.arange(8) * 5.86e6
    tau, sigma = 41.3e-9, 2e-8
    y = np.exp(2j * np.pi * freqs * (sigma - 0.0 - tau))[None, :]
    out = resync_phasors(y, freqs, sigma, 0.0)[0]
    want = np.exp(-2j * np.pi * freqs * tau)
    assert np.allclose(np.angle(out * np.conj(want)), 0.0, atol=1e-6)


# --- Stolt resampling -----------------------------------------------------

def test_stolt_uniform_input_unchanged():
    fz = np.linspace(1.0, 2.0, 11)
    v = np.exp(1j * fz)
    assert np.array_equal(stolt_resample(v, fz, fz), v)


def test_stolt_reproduces_linear_spectra():
    rng = np.random.default_rng(0)
    src = np.sort(rng.uniform(0, 10, 40))
    tgt = np.linspace(src[0], src[-1], 77)
    v = (2 - 3j) * src + (1 + 0.5j)
    out = stolt_resample(v, src, tgt)
    assert np.allclose(out, (2 - 3j) * tgt + (1 + 0.5j), rtol=0, atol=1e-12)


def test_stolt_error_is_second_order():
    tgt = np.linspace(0.05, 0.95, 101)
    f = lambda x: (1 + 2j) * x**2 + np.sin(x) * 1j
    errs = []
    for n in (21, 41):
        src = np.linspace(0, 1, n)
        errs.append(np.max(np.abs(stolt_resample(f(src), src, tgt) - f(tgt))))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_stolt_out_of_range_zero_and_monotone_check():
    src = np.array([1.0, 2.0, 3.0])
    out = stolt_resample(np.ones(3, dtype=complex), src, np.array([0.5, 1.5, 3.5]))
    assert np.array_equal(out, [0, 1, 0])
    with pytest.raises(ImagingError):
        stolt_resample(np.ones(3), np.array([1.0, 3.0, 2.0]), np.array([1.5]))


def test_vectorised_stolt_matches_column_version(rng):
    freqs = 57e9 + np.arange(32) * 1e8
    rho2 = rng.uniform(0, 0.3, (5, 4)) * freqs[0] ** 2
    S = rng.standard_normal((5, 4, 32)) + 1j * rng.standard_normal((5, 4, 32))
    fz_src = np.sqrt(freqs**2 - rho2[..., None])
    tgt = np.linspace(fz_src.min() - 1e8, fz_src.max() + 1e8, 50)
    a = stolt_columns(S, freqs, rho2, tgt)
    b = stolt_resample(S, fz_src, tgt)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_vectorised_stolt_ignores_negative_targets():
    freqs = 57e9 + np.arange(8) * 1e8
    rho2 = np.array([[0.5]]) * freqs[0] ** 2
    S = np.ones((1, 1, 8), dtype=complex)
    fz = np.sqrt(freqs**2 - rho2[..., None])
    out = stolt_columns(S, freqs, rho2, -fz[0, 0, ::-1])
    assert np.all(out == 0)


# --- reconstruction -------------------------------------------------------

def test_point_focuses_at_its_voxel_with_reference_band():
    rx, xs, ys = planar_aperture((0, 0, 0), 0.0375, 0.0375, 16, 16)
    freqs = 57e9 + np.arange(512) * 5.86e6
    target = np.array([0.0, 0.0, 5.0])
    grid = centred_grid(target, (0.2, 0.2, 0.05), (9, 9, 11))
    img = reconstruct_image(phasors(target, rx, freqs), xs, ys, 0.0, freqs, 1.0, grid)
    assert np.allclose(img.peak_point(), target)


def test_two_targets_three_resolutions_apart_in_range(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    dz = range_resolution(freqs[0], freqs[-1])
    t = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 0.5 + 3 * dz]])
    grid = centred_grid([0, 0, 0.5 + 1.5 * dz], (0.02, 0.02, dz / 4), (5, 5, 25))
    img = reconstruct_image(phasors(t, rx, freqs), xs, ys, 0.0, freqs, 1.0, grid)
    prof = np.abs(img.continuous[2, 2, :])
    peaks = [k for k in range(1, len(prof) - 1) if prof[k] > prof[k - 1] and prof[k] > prof[k + 1]
             and prof[k] > 0.5 * prof.max()]
    assert len(peaks) == 2
    assert np.allclose(grid.axes()[2][peaks], t[:, 2], atol=dz / 4)


def test_empty_scene_gives_zero_image(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    grid = centred_grid([0, 0, 0.5], 0.05, (4, 4, 4))
    img = reconstruct_image(np.zeros((len(rx), len(freqs))), xs, ys, 0.0, freqs, 1.0, grid)
    assert not np.any(img.continuous)
    assert not np.any(backprojection_oracle(np.zeros((len(rx), len(freqs))), rx, freqs, 1.0, grid).continuous)


def test_reconstruction_rejects_bad_input(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    grid = centred_grid([0, 0, 0.5], 0.05, (4, 4, 4))
    y = phasors([0, 0, 0.5], rx, freqs)
    bad_xs = xs.copy()
    bad_xs[3] += 1e-3
    with pytest.raises(ImagingError, match="regular grid"):
        reconstruct_image(y, bad_xs, ys, 0.0, freqs, 1.0, grid)
    with pytest.raises(ImagingError, match="regular grid"):
        reconstruct_image(y[:-1], xs, ys, 0.0, freqs, 1.0, grid)
    with pytest.raises(ImagingError):
        reconstruct_image(y, xs, ys, 0.0, freqs, 0.0, grid)


def test_reconstruction_is_linear(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    grid = centred_grid([0, 0, 0.5], 0.04, (6, 6, 6))
    ya = phasors([0.02, 0.0, 0.48], rx, freqs)
    yb = phasors([-0.04, 0.04, 0.56], rx, freqs, amps=[0.6])
    ia = reconstruct_image(ya, xs, ys, 0.0, freqs, 1.0, grid).continuous
    ib = reconstruct_image(yb, xs, ys, 0.0, freqs, 1.0, grid).continuous
    iab = reconstruct_image(ya + yb, xs, ys, 0.0, freqs, 1.0, grid).continuous
    assert np.max(np.abs(iab - ia - ib)) <= 1e-9 * np.max(np.abs(iab))


def test_gamma_is_divided_out(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    grid = centred_grid([0, 0, 0.5], 0.05, (4, 4, 4))
    g = 0.4 * np.exp(0.7j)
    a = reconstruct_image(phasors([0, 0, 0.5], rx, freqs), xs, ys, 0.0, freqs, 1.0, grid).continuous
    b = reconstruct_image(phasors([0, 0, 0.5], rx, freqs, gamma=g), xs, ys, 0.0, freqs, g, grid).continuous
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9)


def test_shift_covariance(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    pitch = xs[1] - xs[0]
    grid = centred_grid([0, 0, 0.5], (0.02, 0.02, 0.025), (9, 9, 9))
    t = np.array([0.0, 0.0, 0.5])
    a = reconstruct_image(phasors(t, rx, freqs), xs, ys, 0.0, freqs, 1.0, grid).peak_point()
    rx2 = rx - [pitch, 0, 0]  # equivalent to moving the scene by +pitch in x
    b = reconstruct_image(phasors(t, rx2, freqs), xs, ys, 0.0, freqs, 1.0, grid).peak_point()
    assert np.all(np.abs(b - (a + [pitch, 0, 0])) <= np.asarray(grid.spacing) + 1e-12)


def test_energy_concentrates_near_a_point_target(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    assert check_sampling(xs[1] - xs[0], ys[1] - ys[0], freqs.mean(), freqs[1] - freqs[0], 1.0).warnings == []
    t = np.array([0.0, 0.0, 0.5])
    grid = centred_grid(t, (0.05, 0.05, 0.05), (9, 9, 9))
    img = reconstruct_image(phasors(t, rx, freqs), xs, ys, 0.0, freqs, 1.0, grid)
    e = np.abs(img.continuous) ** 2
    i, j, k = voxel_of(grid, t)
    assert e[i - 1:i + 2, j - 1:j + 2, k - 1:k + 2].sum() >= 0.5 * e.sum()


def test_fft_pipeline_and_oracle_agree_on_single_targets(nyquist_setup):
    rx, xs, ys, freqs = nyquist_setup
    grid = centred_grid([0, 0, 0.5], 0.04, (8, 8, 8))
    rng = np.random.default_rng(3)
    pts = grid.points().reshape(-1, 3)
    for _ in range(5):
        t = pts[rng.integers(len(pts))]
        y = phasors(t, rx, freqs)
        a = reconstruct_image(y, xs, ys, 0.0, freqs, 1.0, grid)
        b = backprojection_oracle(y, rx, freqs, 1.0, grid)
        assert np.allclose(a.peak_point(), t) and np.allclose(b.peak_point(), t)


def test_oracle_is_a_matched_filter(nyquist_setup):
    rx, _, _, freqs = nyquist_setup
    t = np.array([0.01, -0.02, 0.45])
    grid = ImageGrid(tuple(t), (0.01, 0.01, 0.01), (1, 1, 1))
    val = backprojection_oracle(phasors(t, rx, freqs), rx, freqs, 1.0, grid).continuous.ravel()[0]
    assert np.isclose(val, len(rx) * len(freqs), rtol=1e-9)


# --- thresholding ---------------------------------------------------------

def test_threshold_edges():
    grid = ImageGrid((0, 0, 0), (1, 1, 1), (2, 2, 1))
    img = VoxelImage(grid, np.array([[[0.0], [0.5]], [[1.0], [2.0]]], dtype=complex))
    assert threshold_image(img, 0.0).binary.all()
    b = threshold_image(img, 1.0).binary
    assert b.sum() == 1 and b[1, 1, 0]
    assert threshold_image(img, 0.5).binary.sum() == 2
    assert np.allclose(img.occupied_points(), [[1, 0, 0], [1, 1, 0]])
    with pytest.raises(ImagingError):
        threshold_image(img, 1.5)


def test_unthresholded_image_has_no_points():
    img = VoxelImage(ImageGrid((0, 0, 0), (1, 1, 1), (1, 1, 1)), np.ones((1, 1, 1)))
    with pytest.raises(ImagingError):
        img.occupied_points()


# --- resolution and sampling ----------------------------------------------

def test_azimuth_resolution_values():
    assert np.isclose(azimuth_resolution(58.5e9, 1.0, 10.0), 0.002577, atol=5e-7)
    assert azimuth_resolution(58.5e9, 0.0, 3.0) == C / (2 * 58.5e9)
    assert np.isclose(azimuth_resolution(58.5e9, 1.0, 1e9), 0.002564, atol=1e-6)
    with pytest.raises(ImagingError):
        azimuth_resolution(58.5e9, 1.0, 0.0)


def test_range_resolution_values():
    assert np.isclose(range_resolution(57e9, 60e9), 0.1)
    assert np.isclose(range_resolution(57e9, 63e9), 0.05)
    assert np.isclose(range_resolution(1e9, 1.3e9), 1.0)


def test_sampling_rules():
    assert check_sampling(0.002, 0.002, 58.5e9, 5.86e6, 10.0).spatial_ok
    rep = check_sampling(1 / 15, 1 / 15, 58.5e9, 5.86e6, 10.0)
    assert not rep.spatial_ok and "Nyquist" in rep.warnings[0]
    assert check_sampling(0.002, 0.002, 58.5e9, 5.86e6, 51.2).freq_ok
    assert not check_sampling(0.002, 0.002, 58.5e9, 5.86e6, 60.0).freq_ok


def test_point_cloud_round_trip(tmp_path):
    pts = np.array([[0.1, 0.2, 0.3], [1.0, -2.0, 3.5]])
    p = tmp_path / "cloud.xyz"
    write_point_cloud(p, pts, [0.5, 1.0])
    assert p.read_text().splitlines()[0] == "0.100000 0.200000 0.300000 0.5"
    q, v = read_point_cloud(p)
    assert np.allclose(q, pts) and np.allclose(v, [0.5, 1.0])
    write_point_cloud(p, np.empty((0, 3)))
    q, v = read_point_cloud(p)
    assert q.shape == (0, 3)
