"""Clock-gap synchronisation from two-tone phase differences.

Each representative antenna's two tones give a phase difference
``eta_m = 2*pi*delta*(tau_m - sigma)`` at every receive antenna.  Differencing
against antenna 1 removes the unknown clock gap and leaves range differences,
which are solved for the (virtual) antenna position by Gauss-Newton.  The clock
gap then follows from the recovered range.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import SPEED_OF_LIGHT
from .signals import DemodulatedSignal

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class SyncError(RuntimeError):
    pass


@dataclass
class PdoaMeasurement:
    """Wrapped phase differences ``eta[path, rx]`` for antennas a and b."""

    eta_a: NDArray[np.float64]
    eta_b: NDArray[np.float64]
    delta: float


@dataclass
class LocateResult:
    position: NDArray[np.float64]
    iterations: int
    residual_norm: float
    converged: bool


@dataclass
class SyncEstimate:
    positions_a: NDArray[np.float64]  # (L, 3)
    positions_b: NDArray[np.float64]  # (L, 3)
    sigma_hat: float
    sigma_per_path: NDArray[np.float64]  # (L, 2): columns a, b
    iterations: NDArray[np.int64]
    residual_norm: NDArray[np.float64]
    covariance: NDArray[np.float64] | None  # (L, 3, 3) for antenna a
    flags: list[str]


def _wrap(a):
    w = np.mod(a + np.pi, TWO_PI) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def extract_eta(sw: DemodulatedSignal) -> PdoaMeasurement:
    """eta = arg(tone0 * conj(tone1)) = 2*pi*delta*(tau - sigma), wrapped to (-pi, pi]."""
    out = []
    for tones in (sw.sw_alpha, sw.sw_beta):
        if np.any(np.abs(tones) == 0):
            raise SyncError("degenerate phasor")
        out.append(_wrap(np.angle(tones[..., 0] * np.conj(tones[..., 1]))))
    return PdoaMeasurement(out[0], out[1], sw.sw_spec.delta)


def tdoa_rhs(eta: NDArray[np.float64], delta: float, c: float = SPEED_OF_LIGHT):
    """Range differences d_m - d_1 (m = 2..M) from one path's phase differences."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] < 4:
        raise SyncError("underdetermined")
    return c * _wrap(eta[..., 1:] - eta[..., :1]) / (TWO_PI * delta)


def range_differences(x, rx) -> NDArray[np.float64]:
    """d_m - d_1 for m = 2..M, written as a ratio so no two long ranges are subtracted."""
    x = np.asarray(x, dtype=float)
    rx = np.asarray(rx, dtype=float)
    d = np.linalg.norm(rx - x, axis=-1)
    # |x - p_m|^2 - |x - p_1|^2 = (p_1 - p_m) . (2x - p_m - p_1)
    num = np.sum((rx[:1] - rx[1:]) * (2 * x - rx[1:] - rx[:1]), axis=-1)
    return num / (d[1:] + d[0])


def jacobian(x, rx) -> NDArray[np.float64]:
    """Rows d(F_m)/dx = unit(x - p_m) - unit(x - p_1), m = 2..M."""
    diff = x - rx
    u = diff / np.linalg.norm(diff, axis=-1, keepdims=True)
    return u[1:] - u[0]


def _boresight_seed(rhs, rx):
    center = rx.mean(axis=0)
    diag = float(np.linalg.norm(rx.max(axis=0) - rx.min(axis=0)))
    rng = float(np.max(np.abs(rhs))) + diag if len(rhs) else diag
    return center + np.array([0.0, 0.0, rng])


def _candidate_triples(rx):
    """Equations (indices into m = 2..M) whose antennas sit at the aperture extremes."""
    rel = rx[1:, :2] - rx[0, :2]
    dirs = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)]
    ext = sorted({int(np.argmax(rel @ np.array(d, dtype=float))) for d in dirs})
    if len(ext) < 3:
        ext = list(range(min(len(rel), 8)))
    return list(itertools.combinations(ext, 3))


def _newton3(rhs3, rx3, seed, max_iter=100):
    x = seed.copy()
    r = range_differences(x, rx3) - rhs3
    for it in range(max_iter):
        J = jacobian(x, rx3)
        try:
            h = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return x, False
        step = 1.0
        for _ in range(30):
            xn = x + step * h
            rn = range_differences(xn, rx3) - rhs3
            if np.linalg.norm(rn) < np.linalg.norm(r):
                break
            step *= 0.5
        else:
            return x, False
        x, r = xn, rn
        if np.linalg.norm(step * h) < 1e-10:
            return x, True
    return x, np.linalg.norm(r) < 1e-8


def initial_guess(rhs, rx, z0: float | None = None):
    """Solve three well-conditioned equations exactly for a Gauss-Newton seed.

    Returns ``(x, ok)``; ``ok`` is False when Newton failed and the boresight
    seed is returned instead.
    """
    rhs = np.asarray(rhs, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if len(rx) < 4:
        raise SyncError("underdetermined")
    z0 = float(rx[0, 2]) if z0 is None else z0
    seed = _boresight_seed(rhs, rx)
    triples = _candidate_triples(rx)
    conds = []
    for t in triples:
        J = jacobian(seed, rx[[0, *(i + 1 for i in t)]])
        conds.append(np.linalg.cond(J))
    best = None
    for idx in np.argsort(conds):
        t = triples[idx]
        sub = rx[[0, *(i + 1 for i in t)]]
        x, ok = _newton3(rhs[list(t)], sub, seed)
        if ok:
            if x[2] < z0:
                x = x.copy()
                x[2] = 2 * z0 - x[2]
            res = np.linalg.norm(range_differences(x, rx) - rhs)
            if best is None or res < best[1]:
                best = (x, res)
            if res < 1e-6 * len(rhs):
                break
    if best is None:
        log.warning("initial guess: Newton failed on every triple, using boresight seed")
        return seed, False
    return best[0], True


def gauss_newton_locate(rhs, rx, init, tol: float = 1e-12, max_iter: int = 50,
                        max_halvings: int = 8, cond_limit: float = 1e12) -> LocateResult:
    """Damped Gauss-Newton on F_m(x) = rhs_m; each step is the least-squares h of G h = b."""
    rhs = np.asarray(rhs, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if len(rx) < 4:
        raise SyncError("underdetermined")
    x = np.asarray(init, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise SyncError("initial point must be finite")
    z0 = float(np.mean(rx[:, 2]))
    b = rhs - range_differences(x, rx)
    res = float(np.linalg.norm(b))
    for it in range(1, max_iter + 1):
        G = jacobian(x, rx)
        GtG = G.T @ G
        if np.linalg.cond(GtG) > cond_limit:
            if it == 1:
                raise SyncError("degenerate aperture geometry")
            # noise has pushed the iterate out along an asymptote
            return LocateResult(x, it, res, False)
        h = np.linalg.solve(GtG, G.T @ b)
        step = 1.0
        for _ in range(max_halvings + 1):
            xn = x + step * h
            if xn[2] < z0:
                xn[2] = 2 * z0 - xn[2]  # mirror ambiguity of a planar aperture
            bn = rhs - range_differences(xn, rx)
            rn = float(np.linalg.norm(bn))
            if rn <= res:
                break
            step *= 0.5
        else:
            # no decrease along h: we are at the floor of the residual
            return LocateResult(x, it, res, bool(np.linalg.norm(h) < 1e-6))
        x, b, res = xn, bn, rn
        if np.linalg.norm(step * h) < tol:
            return LocateResult(x, it, res, True)
    return LocateResult(x, max_iter, res, False)


def unwrap_absolute(eta):
    """Absolute phase difference assuming tau - sigma lies in [0, 1/delta)."""
    return np.mod(eta, TWO_PI)


def estimate_sigma(x_hat, eta, rx, delta: float, c: float = SPEED_OF_LIGHT) -> float:
    """Mean over receive antennas of |p_m - x| / c - eta_m / (2 pi delta)."""
    x_hat = np.asarray(x_hat, dtype=float)
    if not np.all(np.isfinite(x_hat)):
        raise SyncError("position must be finite")
    d = np.linalg.norm(np.asarray(rx) - x_hat, axis=-1)
    sig_m = d / c - unwrap_absolute(np.asarray(eta, dtype=float)) / (TWO_PI * delta)
    return float(np.mean(sig_m))


def sync_covariance(x_hat, rx, sigma_z: float, delta: float, c: float = SPEED_OF_LIGHT):
    """(G^T G)^-1 * (c sigma_z / (2 pi delta))^2 for i.i.d. phase-difference errors."""
    G = jacobian(np.asarray(x_hat, dtype=float), np.asarray(rx, dtype=float))
    GtG = G.T @ G
    if np.linalg.cond(GtG) > 1e15:
        raise SyncError("singular G^T G")
    scale = (c * sigma_z / (TWO_PI * delta)) ** 2
    return np.linalg.inv(GtG) * scale


def locate(eta, rx, delta: float, c: float = SPEED_OF_LIGHT) -> tuple[LocateResult, bool]:
    rhs = tdoa_rhs(eta, delta, c)
    x0, ok = initial_guess(rhs, rx)
    return gauss_newton_locate(rhs, rx, x0), ok


def synchronize(sw: DemodulatedSignal, rx, sigma_z: float = 0.0,
                c: float = SPEED_OF_LIGHT) -> SyncEstimate:
    """Locate both representative antennas on every path and average the clock gap."""
    meas = extract_eta(sw)
    rx = np.asarray(rx, dtype=float)
    L = meas.eta_a.shape[0]
    pos = np.zeros((2, L, 3))
    sig = np.zeros((L, 2))
    iters = np.zeros((L, 2), dtype=np.int64)
    resid = np.zeros((L, 2))
    flags = []
    for l in range(L):
        for j, eta in enumerate((meas.eta_a[l], meas.eta_b[l])):
            res, ok = locate(eta, rx, meas.delta, c)
            if not ok:
                flags.append(f"path {l} rep {'ab'[j]}: initial guess fell back to boresight")
            if not res.converged:
                flags.append(f"path {l} rep {'ab'[j]}: Gauss-Newton did not converge")
            pos[j, l] = res.position
            iters[l, j] = res.iterations
            resid[l, j] = res.residual_norm
            sig[l, j] = estimate_sigma(res.position, eta, rx, meas.delta, c)
    cov = None
    if sigma_z > 0:
        cov = np.full((L, 3, 3), np.nan)
        for l in range(L):
            try:
                cov[l] = sync_covariance(pos[0, l], rx, sigma_z, meas.delta, c)
            except SyncError:
                flags.append(f"path {l}: covariance undefined at the estimate")
    return SyncEstimate(pos[0], pos[1], float(np.mean(sig)), sig, iters, resid, cov, flags)


def monte_carlo_covariance(x_true, rx, sigma_z: float, delta: float, runs: int, seed: int,
                           c: float = SPEED_OF_LIGHT) -> NDArray[np.float64]:
    """Sample covariance of Gauss-Newton estimates under i.i.d. phase-difference errors.

    Each run perturbs the M-1 differenced phases by N(0, sigma_z^2) and solves
    from the true position.
    """
    rx = np.asarray(rx, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    rhs0 = range_differences(x_true, rx)
    rng = np.random.default_rng(seed)
    scale = c / (TWO_PI * delta)
    est = np.empty((runs, 3))
    for r in range(runs):
        rhs = rhs0 + scale * sigma_z * rng.standard_normal(len(rhs0))
        est[r] = gauss_newton_locate(rhs, rx, x_true, tol=1e-12).position
    return np.cov(est, rowvar=False)
