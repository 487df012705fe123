"""Range-migration imaging of one propagation path.

Pipeline for a regular planar receive grid at ``z = z0``:

1. 2-D spatial DFT of every frequency slice across the aperture, evaluated on
   the (fx, fy) band that the region of interest can occupy;
2. divide by the path reflection coefficient, apply the aperture reference
   phase and demodulate by the region's reference depth;
3. Stolt resampling of each ``(fx, fy)`` column from the irregular
   ``fz = sqrt(f^2 - fx^2 - fy^2)`` samples to a uniform axis;
4. inverse transform evaluated directly at the voxel centres, so coarse
   voxels are exact samples of the fine image instead of an aliased one.

All exponent signs follow the forward model ``exp(-j 2 pi f r / c)``: a
noiseless point source focuses at its true position.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import SPEED_OF_LIGHT

log = logging.getLogger(__name__)


class ImagingError(ValueError):
    pass


@dataclass(frozen=True)
class ImageGrid:
    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    dims: tuple[int, int, int]

    def axes(self):
        return [o + d * np.arange(n) for o, d, n in zip(self.origin, self.spacing, self.dims)]

    def points(self) -> NDArray[np.float64]:
        gx, gy, gz = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def center(self) -> NDArray[np.float64]:
        return np.array([o + d * (n - 1) / 2 for o, d, n in zip(self.origin, self.spacing, self.dims)])

    @classmethod
    def around(cls, lo, hi, pitch) -> "ImageGrid":
        """Smallest grid with the given pitch covering the box [lo, hi]."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        pitch = np.broadcast_to(np.asarray(pitch, dtype=float), (3,))
        dims = np.maximum(1, np.ceil((hi - lo) / pitch).astype(int) + 1)
        center = (lo + hi) / 2
        origin = center - pitch * (dims - 1) / 2
        return cls(tuple(origin), tuple(pitch), tuple(int(n) for n in dims))


@dataclass
class VoxelImage:
    grid: ImageGrid
    continuous: NDArray[np.complex128]
    binary: NDArray[np.bool_] | None = None
    nu: float | None = None
    warnings: list[str] = field(default_factory=list)

    def normalized(self) -> NDArray[np.float64]:
        mag = np.abs(self.continuous)
        peak = mag.max() if mag.size else 0.0
        return mag / peak if peak > 0 else mag

    def occupied_points(self) -> NDArray[np.float64]:
        if self.binary is None:
            raise ImagingError("image has not been thresholded")
        return self.grid.points()[self.binary]

    def peak_point(self) -> NDArray[np.float64]:
        idx = np.unravel_index(np.argmax(np.abs(self.continuous)), self.grid.dims)
        return self.grid.points()[idx]



def resync_phasors(y, freqs, sigma_hat: float, sigma_used: float):
    """Move the demodulation reference from ``sigma_used`` to ``sigma_hat``."""
    cyc = np.asarray(freqs, dtype=float) * (sigma_hat - sigma_used)
    return np.asarray(y) * np.exp(-2j * np.pi * (cyc - np.round(cyc)))


def stolt_resample(values, fz_src, fz_target):
    """Linear interpolation of complex spectra from ``fz_src`` onto ``fz_target``.

    Works column-wise over leading dimensions.  Each source column must be
    strictly increasing; NaN source abscissae mark missing (evanescent)
    samples.  Targets outside a column's sampled range are set to 0.
    """
    values = np.asarray(values)
    fz_src = np.broadcast_to(np.asarray(fz_src, dtype=float), values.shape)
    fz_target = np.asarray(fz_target, dtype=float)
    lead = values.shape[:-1]
    tgt = np.broadcast_to(fz_target, lead + fz_target.shape[-1:])
    v2 = values.reshape(-1, values.shape[-1])
    s2 = fz_src.reshape(-1, values.shape[-1])
    t2 = tgt.reshape(-1, tgt.shape[-1])
    out = np.zeros((v2.shape[0], t2.shape[1]), dtype=np.result_type(values.dtype, np.complex64))
    for i in range(v2.shape[0]):
        ok = np.isfinite(s2[i])
        xs = s2[i][ok]
        if xs.size < 2:
            continue
        if np.any(np.diff(xs) <= 0):
            raise ImagingError("fz samples must be strictly increasing")
        vs = v2[i][ok]
        t = t2[i]
        inside = (t >= xs[0]) & (t <= xs[-1])
        if not inside.any():
            continue
        ti = t[inside]
        j = np.clip(np.searchsorted(xs, ti, side="right") - 1, 0, xs.size - 2)
        w = (ti - xs[j]) / (xs[j + 1] - xs[j])
        out[i, inside] = vs[j] * (1 - w) + vs[j + 1] * w
    return out.reshape(lead + (t2.shape[1],))


def stolt_columns(S, freqs, rho2, fz_targets, fz_src=None):
    """Vectorised Stolt resampling for the imaging pipeline.

    ``S[..., k]`` is sampled at ``fz_k = sqrt(f_k^2 - rho2)`` (``rho2`` has the
    leading shape of ``S``; pass ``fz_src`` if already computed, with 0 marking
    evanescent samples).  Each target ``fz`` (shape ``(..., Q)``) is mapped
    back to ``f = sqrt(fz^2 + rho2)``, bracketed on the sorted ``freqs`` axis
    and linearly interpolated in ``fz``.  Same result as
    :func:`stolt_resample` column by column.
    """
    freqs = np.asarray(freqs, dtype=float)
    K = len(freqs)
    lead = S.shape[:-1]
    rho2 = np.asarray(rho2, dtype=float)[..., None]
    if fz_src is None:
        fz_src = np.sqrt(np.maximum(freqs * freqs - rho2, 0.0))
    tz = np.broadcast_to(np.asarray(fz_targets, dtype=float), lead + np.shape(fz_targets)[-1:])
    ft = np.sqrt(tz * tz + rho2)
    step = freqs[1] - freqs[0]
    if np.allclose(np.diff(freqs), step, rtol=1e-12, atol=0):
        kf = (ft - freqs[0]) / step
        inside = (kf >= 0) & (kf <= K - 1)
        j = np.minimum(kf.astype(np.intp), K - 2)
    else:
        j = np.searchsorted(freqs, ft, side="right") - 1
        inside = (j >= 0) & (ft <= freqs[-1])
        j = np.clip(j, 0, K - 2)
    j = np.where(inside, j, 0)
    base = np.arange(int(np.prod(lead))).reshape(lead + (1,)) * K + j
    zsrc = np.ascontiguousarray(fz_src).ravel()
    z0 = zsrc[base]
    z1 = zsrc[base + 1]
    # both bracketing samples must propagate; negative targets would alias
    # onto the positive branch through fz^2
    inside &= (z0 > 0) & (tz >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(inside, (tz - z0) / (z1 - z0), 0.0)
    flat = np.ascontiguousarray(S).ravel()
    return np.where(inside, flat[base] * (1.0 - w) + flat[base + 1] * w, 0.0)


def spectral_support(grid: ImageGrid, xs, ys, z0: float, f_lo: float, f_hi: float):
    """Range of (fx, fy) = f * direction cosines over ROI points and aperture corners."""
    lo = np.asarray(grid.origin, dtype=float)
    hi = lo + np.asarray(grid.spacing) * (np.asarray(grid.dims) - 1)
    probes = np.stack(np.meshgrid(*[np.linspace(a, b, 5) for a, b in zip(lo, hi)], indexing="ij"),
                      axis=-1).reshape(-1, 3)
    ap = np.array([[x, y, z0] for x in (xs[0], xs[-1]) for y in (ys[0], ys[-1])])
    d = probes[:, None, :] - ap[None, :, :]
    u = d / np.linalg.norm(d, axis=-1, keepdims=True)
    out = []
    for axis in (0, 1):
        umin, umax = u[..., axis].min(), u[..., axis].max()
        out.append((min(f_lo * umin, f_hi * umin), max(f_lo * umax, f_hi * umax)))
    return out


def _axis(lo, hi, step):
    n = int(np.ceil((hi - lo) / step)) + 1
    mid = 0.5 * (lo + hi)
    return mid + (np.arange(n) - (n - 1) / 2) * step


def reconstruct_image(y, xs, ys, z0: float, freqs, gamma: complex, grid: ImageGrid,
                      c: float = SPEED_OF_LIGHT, oversample: float = 1.5,
                      max_block: int = 1 << 22, max_lateral: int = 512) -> VoxelImage:
    """Continuous image of one path from synchronised phasors ``y[m, k]``.

    ``y`` rows follow the x-major order of the receive grid ``(xs, ys)``
    (``y.reshape(len(xs), len(ys), K)``).  The lateral spectrum is evaluated
    on the band the region of interest can actually occupy.  Its sample step
    makes the image period at least ``oversample`` times the region extent and
    wide enough for the point-spread spill of targets at the edge, with at most
    ``max_lateral`` samples per lateral axis.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    y = np.asarray(y, dtype=np.complex128)
    nxa, nya, K = len(xs), len(ys), len(freqs)
    if y.shape != (nxa * nya, K):
        raise ImagingError("aperture must be regular grid")
    for ax in (xs, ys):
        if len(ax) > 2 and not np.allclose(np.diff(ax), ax[1] - ax[0], rtol=1e-9, atol=1e-12):
            raise ImagingError("aperture must be regular grid")
    if K < 2 or np.any(np.diff(freqs) <= 0):
        raise ImagingError("frequencies must be strictly increasing")
    if abs(gamma) == 0:
        raise ImagingError("reflection coefficient must be non-zero")
    if not np.any(y):
        return VoxelImage(grid, np.zeros(grid.dims, dtype=np.complex128))

    nx, ny, nz = grid.dims
    px, py, pz = grid.axes()
    ext = np.asarray(grid.spacing) * np.asarray(grid.dims)
    zc = 0.5 * (pz[0] + pz[-1])

    (fx_lo, fx_hi), (fy_lo, fy_hi) = spectral_support(grid, xs, ys, z0, freqs[0], freqs[-1])
    # the image repeats with period c / df; keep the point-spread spill of
    # targets near the region's edge (about two resolution cells) from wrapping in
    f_c = 0.5 * (freqs[0] + freqs[-1])
    rng = max(abs(zc - z0), 1e-9)
    spill = []
    for ax in (xs, ys):
        half = 0.5 * (ax[-1] - ax[0]) if len(ax) > 1 else 0.0
        spill.append(azimuth_resolution(f_c, rng, half, c) if half > 0 else 0.0)
    spill.append(range_resolution(freqs[0], freqs[-1], c))
    periods = [max(oversample * e, e + 4.0 * d) for e, d in zip(ext, spill)]
    # a far-off region has a huge lateral spill; cap the lateral sample count
    for i, band in enumerate((fx_hi - fx_lo, fy_hi - fy_lo)):
        if band > 0:
            periods[i] = max(oversample * ext[i], min(periods[i], c * max_lateral / band))
    dfx, dfy, dfz = (c / p for p in periods)
    # never coarser than the tone spacing: the range period stays c / delta
    dfz = min(dfz, float(np.min(np.diff(freqs))))
    fx = _axis(fx_lo - dfx, fx_hi + dfx, dfx)
    fy = _axis(fy_lo - dfy, fy_hi + dfy, dfy)
    # per-column uniform fz axis starting at the column's lowest propagating fz
    # a column's band fz(f_K) - fz(f_1) grows with rho up to rho = f_1
    rho2 = min(max(fx_lo**2, fx_hi**2) + max(fy_lo**2, fy_hi**2), freqs[0] ** 2)
    width = np.sqrt(freqs[-1] ** 2 - rho2) - np.sqrt(freqs[0] ** 2 - rho2)
    q = np.arange(int(np.ceil(width / dfz)) + 1) * dfz

    Y = y.reshape(nxa, nya, K) / gamma
    Ey = np.exp(-2j * np.pi * np.outer(fy, ys) / c)  # forward, (nfy, nya)
    Ez = np.exp(2j * np.pi * np.outer(pz - zc, q) / c)  # inverse, (nz, Q)
    Exi = np.exp(2j * np.pi * np.outer(px, fx) / c)  # inverse, (nx, nfx)
    Eyi = np.exp(2j * np.pi * np.outer(py, fy) / c)  # inverse, (ny, nfy)
    YEy = np.einsum("abk,jb->ajk", Y, Ey)  # (nxa, nfy, K)

    img = np.zeros((nx, ny, nz), dtype=np.complex128)
    rows = max(1, max_block // max(1, len(fy) * max(K, len(q))))
    for s in range(0, len(fx), rows):
        fxb = fx[s:s + rows]
        Ex = np.exp(-2j * np.pi * np.outer(fxb, xs) / c)
        S = np.einsum("ia,ajk->ijk", Ex, YEy)  # (b, nfy, K)
        rho2 = fxb[:, None] ** 2 + fy[None, :] ** 2
        # aperture reference phase and reference-range demodulation: what is
        # left varies slowly along fz and survives linear interpolation
        fzs = np.sqrt(np.maximum(freqs ** 2 - rho2[..., None], 0.0))
        S *= np.exp(2j * np.pi * fzs * ((zc - z0) / c))
        fz0 = fzs.max(axis=-1) - q[-1]  # column band [fz(f_K) - width, fz(f_K)]
        U = stolt_columns(S, freqs, rho2, fz0[..., None] + q, fzs)  # (b, nfy, Q)
        A = (U @ Ez.T) * np.exp(2j * np.pi * fz0[..., None] * (pz - zc) / c)  # (b, nfy, nz)
        img += np.einsum("xi,ijz,yj->xyz", Exi[:, s:s + rows], A, Eyi, optimize=True)
    return VoxelImage(grid, img)


def threshold_image(img: VoxelImage, nu: float = 0.5) -> VoxelImage:
    if not 0.0 <= nu <= 1.0:
        raise ImagingError("threshold must lie in [0, 1]")
    img.binary = img.normalized() >= nu
    img.nu = nu
    return img


def backprojection_oracle(y, rx, freqs, gamma: complex, grid: ImageGrid,
                          c: float = SPEED_OF_LIGHT, max_block: int = 1 << 22) -> VoxelImage:
    """Matched filter: sum_{m,k} y_mk / gamma * exp(+j 2 pi f_k |x - p_m| / c)."""
    y = np.asarray(y, dtype=np.complex128) / gamma
    rx = np.asarray(rx, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    pts = grid.points().reshape(-1, 3)
    out = np.zeros(len(pts), dtype=np.complex128)
    chunk = max(1, max_block // (len(rx) * len(freqs)))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        r = np.linalg.norm(p[:, None, :] - rx[None, :, :], axis=-1)  # (v, M)
        cyc = r[:, :, None] * freqs[None, None, :] / c
        ph = np.exp(2j * np.pi * (cyc - np.round(cyc)))
        out[s:s + chunk] = np.einsum("vmk,mk->v", ph, y)
    return VoxelImage(grid, out.reshape(grid.dims))


# --- resolution and sampling ------------------------------------------------

def azimuth_resolution(f_c: float, R: float, D: float, c: float = SPEED_OF_LIGHT) -> float:
    if D <= 0:
        raise ImagingError("range D must be positive")
    return c * np.sqrt(R * R + D * D) / (2.0 * f_c * D)


def range_resolution(f1: float, fK: float, c: float = SPEED_OF_LIGHT) -> float:
    if fK <= f1:
        raise ImagingError("fK must exceed f1")
    return c / (fK - f1)


@dataclass
class SamplingReport:
    spatial_limit: float
    spatial_spacing: float
    spatial_ok: bool
    freq_limit: float
    freq_gap: float
    freq_ok: bool

    @property
    def warnings(self) -> list[str]:
        w = []
        if not self.spatial_ok:
            w.append(f"aperture spacing {self.spatial_spacing:.4g} m exceeds Nyquist limit "
                     f"{self.spatial_limit:.4g} m (ratio {self.spatial_spacing / self.spatial_limit:.1f})")
        if not self.freq_ok:
            w.append(f"frequency gap {self.freq_gap:.4g} Hz exceeds c/R_max = {self.freq_limit:.4g} Hz")
        return w


def check_sampling(dx: float, dy: float, f_c: float, delta: float, r_max: float,
                   c: float = SPEED_OF_LIGHT, rtol: float = 1e-3) -> SamplingReport:
    """Spatial rule dx, dy <= c / (2 f_c); frequency rule delta <= c / R_max.

    ``rtol`` absorbs rounding of quoted parameters at the boundary.
    """
    s_lim = c / (2.0 * f_c)
    f_lim = c / r_max
    spacing = max(dx, dy)
    rep = SamplingReport(s_lim, spacing, spacing <= s_lim * (1 + rtol),
                         f_lim, delta, delta <= f_lim * (1 + rtol))
    for w in rep.warnings:
        log.warning(w)
    return rep


def write_point_cloud(path, points, values=None) -> None:
    """One ``x y z value`` line per point."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if values is None:
        values = np.ones(len(points))
    with open(path, "w") as fh:
        for (x, y, z), v in zip(points, np.asarray(values, dtype=float)):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {v:.6g}\n")


def read_point_cloud(path):
    with open(path) as fh:
        if not fh.read().strip():
            return np.empty((0, 3)), np.empty(0)
    data = np.loadtxt(path, ndmin=2)
    return data[:, :3], data[:, 3]
