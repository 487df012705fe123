"""Map virtual (mirrored) vehicle images back onto the real position.

Each vertical mirror turns the vehicle into a virtual copy.  The line joining a
real antenna and its virtual copy is the mirror normal, at angle ``theta_l``
from +X, and the observed orientation ``phi_l`` of a virtual copy satisfies
``phi_l - 2*theta_l = const`` over all mirrors.  So one unknown angle fixes
every mirror normal; it is found by a 1-D search that makes all pairwise
back-projections of the representative antennas agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import GeometryError, MirrorPlane, observed_angle_phi, reflect_point, wrap_angle


class MappingError(ValueError):
    pass


PARALLEL_TOL = 1e-6


@dataclass
class VirtualPosition:
    path: int
    rep_a: NDArray[np.float64]
    rep_b: NDArray[np.float64]
    occupancy: NDArray[np.float64] | None = None

    @property
    def phi(self) -> float:
        return observed_angle_phi(self.rep_a, self.rep_b)


@dataclass
class MappedPosition:
    theta1_star: float
    thetas: NDArray[np.float64]
    rep_a_star: NDArray[np.float64]
    rep_b_star: NDArray[np.float64]
    objective: float
    occupancy: NDArray[np.float64] | None = None


def theta_chain(theta1: float, phis) -> NDArray[np.float64]:
    """theta_l = theta_1 + (phi_l - phi_1) / 2, wrapped to (-pi, pi]."""
    phis = np.asarray(phis, dtype=float)
    if phis.size < 2:
        raise MappingError("need at least two paths")
    half = wrap_angle(phis - phis[0]) / 2.0
    return np.atleast_1d(wrap_angle(theta1 + half))


def triangulate_point(p1, p2, theta1: float, theta2: float, y_tol: float | None = None):
    """Intersect the XZ lines through ``p1`` at angle ``theta1`` and ``p2`` at ``theta2``.

    Equivalent to the slope form x = [(z1-z2) + (x2 tan2 - x1 tan1)] / (tan2 - tan1)
    but stays finite for vertical lines.  The height is the mean of both inputs.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    c1, s1 = np.cos(theta1), np.sin(theta1)
    c2, s2 = np.cos(theta2), np.sin(theta2)
    den = c1 * s2 - s1 * c2  # sin(theta2 - theta1)
    if abs(den) < PARALLEL_TOL:
        raise MappingError("parallel back-projections")
    if y_tol is not None and abs(p1[1] - p2[1]) > y_tol:
        raise MappingError("non-vertical mirror detected")
    dx, dz = p2[0] - p1[0], p2[2] - p1[2]
    t = (dx * s2 - dz * c2) / den
    return np.array([p1[0] + t * c1, 0.5 * (p1[1] + p2[1]), p1[2] + t * s1])


def triangulate_slope_form(p1, p2, theta1, theta2):
    """Line intersection written with tangents; undefined for vertical lines."""
    t1, t2 = np.tan(theta1), np.tan(theta2)
    x = ((p1[2] - p2[2]) + (p2[0] * t2 - p1[0] * t1)) / (t2 - t1)
    return np.array([x, p1[1], p1[2] + t1 * (x - p1[0])])


def _candidates(theta1, phis, reps_a, reps_b):
    thetas = theta_chain(theta1, phis)
    za, zb = [], []
    for l in range(1, len(phis)):
        try:
            za.append(triangulate_point(reps_a[0], reps_a[l], thetas[0], thetas[l]))
            zb.append(triangulate_point(reps_b[0], reps_b[l], thetas[0], thetas[l]))
        except MappingError:
            continue
    return thetas, np.array(za), np.array(zb)


def _pairwise_sum(pts):
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    return float(d.sum())


def e5_objective(theta1, phis, reps_a, reps_b) -> float:
    """Sum over candidate pairs of |z_a^q - z_a^p| + |z_b^q - z_b^p|; inf if < 2 candidates."""
    _, za, zb = _candidates(theta1, phis, reps_a, reps_b)
    if len(za) < 2:
        return np.inf
    return _pairwise_sum(za) + _pairwise_sum(zb)


def _golden(f, lo, hi, tol):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    fx = f(x)
    for cand, fcand in ((c, fc), (d, fd)):
        if fcand < fx:
            x, fx = cand, fcand
    return x, fx


def search_theta1(vps: list[VirtualPosition], step_deg: float = 0.25,
                  tol: float = 1e-13) -> MappedPosition:
    """Grid search over theta_1 in (-pi, pi] then golden-section refinement.

    ``tol`` is the final bracket width in radians.  Ties between equally good
    grid points go to the smallest |theta_1|.
    """
    if len(vps) < 3:
        raise MappingError("need at least three virtual positions")
    reps_a = np.array([v.rep_a for v in vps], dtype=float)
    reps_b = np.array([v.rep_b for v in vps], dtype=float)
    phis = np.array([v.phi for v in vps])

    step = np.deg2rad(step_deg)
    n = int(round(2 * np.pi / step))
    grid = -np.pi + step * np.arange(1, n + 1)
    vals = np.array([e5_objective(t, phis, reps_a, reps_b) for t in grid])
    if not np.any(np.isfinite(vals)):
        raise MappingError("unresolvable geometry")
    best = np.min(vals)
    ties = np.flatnonzero(vals <= best + 1e-12 * max(1.0, abs(best)))
    i0 = ties[np.argmin(np.abs(grid[ties]))]

    f = lambda t: e5_objective(t, phis, reps_a, reps_b)
    theta1, obj = _golden(f, grid[i0] - step, grid[i0] + step, tol)
    if not obj <= vals[i0]:
        theta1, obj = grid[i0], vals[i0]
    theta1 = wrap_angle(theta1)
    thetas, za, zb = _candidates(theta1, phis, reps_a, reps_b)
    return MappedPosition(theta1, thetas, za.mean(axis=0), zb.mean(axis=0), float(obj))


def reflection_line(theta_star: float, rep_l, rep_star, gamma: complex = 1.0) -> MirrorPlane:
    """Mirror through the midpoint of ``rep_l`` and ``rep_star`` with normal angle ``theta_star``."""
    rep_l = np.asarray(rep_l, dtype=float)
    rep_star = np.asarray(rep_star, dtype=float)
    if np.hypot(rep_l[0] - rep_star[0], rep_l[2] - rep_star[2]) == 0.0:
        raise MappingError("zero displacement, mirror undefined")
    mx = 0.5 * (rep_l[0] + rep_star[0])
    mz = 0.5 * (rep_l[2] + rep_star[2])
    c, s = np.cos(theta_star), np.sin(theta_star)
    if abs(s) < 1e-15:
        return MirrorPlane(gamma=gamma, vertical_x=mx)
    slope = -c / s
    return MirrorPlane(slope, mz - slope * mx, gamma)


def map_vp_to_rp(points, theta_star: float, rep_l, rep_star) -> NDArray[np.float64]:
    """Reflect virtual points across the recovered mirror line."""
    return reflect_point(np.atleast_2d(points), reflection_line(theta_star, rep_l, rep_star))


def map_closed_form(points, theta_star: float, rep_l, rep_star) -> NDArray[np.float64]:
    """Shift along the mirror normal: x += dx, z += tan(theta) * dx.

    dx = tan/(1+tan^2) * ((xa_l + xa* - 2x)/tan + za_l + za* - 2z), the
    solution of the midpoint-on-mirror condition.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.tan(theta_star)
    if t == 0 or not np.isfinite(t):
        raise MappingError("closed form needs a finite non-zero tan(theta)")
    sx = rep_l[0] + rep_star[0]
    sz = rep_l[2] + rep_star[2]
    dx = t / (1.0 + t * t) * ((sx - 2 * pts[:, 0]) / t + sz - 2 * pts[:, 2])
    out = pts.copy()
    out[:, 0] += dx
    out[:, 2] += t * dx
    return out


def fuse_mapped(sets, pitch: float) -> NDArray[np.float64]:
    """Union of mapped point sets; a point is dropped when an earlier set already
    occupies its cell of the global voxel lattice."""
    sets = [np.atleast_2d(np.asarray(s, dtype=float)) for s in sets if len(s)]
    if not sets:
        raise MappingError("nothing to fuse")
    if len(sets) == 1:
        return sets[0].copy()
    taken: set[tuple[int, int, int]] = set()
    out = []
    for s in sets:
        keys = [tuple(k) for k in np.floor(s / pitch).astype(np.int64)]
        fresh = [i for i, k in enumerate(keys) if k not in taken]
        out.append(s[fresh])
        taken.update(keys)
    return np.concatenate(out)


def map_all(vps: list[VirtualPosition], result: MappedPosition, los_tol: float):
    """Per-path real-position point sets.

    A path whose representative point already sits within ``los_tol`` of the
    fused estimate is treated as line of sight and passed through unchanged.
    """
    mapped = []
    for v, th in zip(vps, result.thetas):
        if v.occupancy is None or len(v.occupancy) == 0:
            mapped.append(np.empty((0, 3)))
            continue
        if np.linalg.norm(v.rep_a - result.rep_a_star) <= los_tol:
            mapped.append(np.asarray(v.occupancy, dtype=float).copy())
            continue
        try:
            mapped.append(map_vp_to_rp(v.occupancy, th, v.rep_a, result.rep_a_star))
        except GeometryError as exc:
            raise MappingError(str(exc)) from exc
    return mapped
