"""Scene geometry: antenna point sets, vertical mirror planes and specular images.

Coordinates follow the sensing-vehicle frame: X is the moving direction, Y the
height and Z the width (depth away from the receive aperture).  Every mirror is
a vertical plane, i.e. a line in the XZ plane extruded along Y, so reflection
never changes the Y coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

SPEED_OF_LIGHT = 3e8

Vec3 = NDArray[np.float64]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class MirrorPlane:
    """Vertical reflector ``z = slope * x + intercept`` (or ``x = vertical_x``).

    The line-through-XZ representation keeps the plane perpendicular to the
    ground by construction.  Vertical lines carry ``vertical_x`` instead of an
    infinite slope.
    """

    slope: float = 0.0
    intercept: float = 0.0
    gamma: complex = 1.0 + 0.0j
    vertical_x: float | None = None

    def __post_init__(self):
        if self.vertical_x is None:
            if not (np.isfinite(self.slope) and np.isfinite(self.intercept)):
                raise GeometryError("mirror slope/intercept must be finite")
        elif not np.isfinite(self.vertical_x):
            raise GeometryError("vertical_x must be finite")
        if abs(self.gamma) > 1.0 + 1e-12:
            raise GeometryError("|gamma| must not exceed 1")

    @classmethod
    def from_polar(cls, slope=0.0, intercept=0.0, gamma_mag=1.0, gamma_phase=0.0, vertical_x=None):
        return cls(slope, intercept, gamma_mag * np.exp(1j * gamma_phase), vertical_x)

    @property
    def is_vertical(self) -> bool:
        return self.vertical_x is not None

    def unit_normal_xz(self) -> NDArray[np.float64]:
        """Unit normal of the line in (x, z) components."""
        if self.is_vertical:
            return np.array([1.0, 0.0])
        n = np.array([self.slope, -1.0])
        return n / np.hypot(self.slope, 1.0)

    def normal_angle(self) -> float:
        """Directed angle from +X to the mirror normal, in (-pi/2, pi/2].

        A normal has no preferred sign, so the angle is only meaningful mod pi.
        """
        nx, nz = self.unit_normal_xz()
        ang = np.arctan2(nz, nx)
        if ang <= -np.pi / 2:
            ang += np.pi
        elif ang > np.pi / 2:
            ang -= np.pi
        return float(ang)

    def signed_offset(self, p) -> NDArray[np.float64]:
        """Signed distance of point(s) from the plane along ``unit_normal_xz``."""
        p = np.asarray(p, dtype=float)
        if self.is_vertical:
            return p[..., 0] - self.vertical_x
        return (self.slope * p[..., 0] - p[..., 2] + self.intercept) / np.hypot(self.slope, 1.0)


LOS = None  # path marker: no reflection


def reflect_point(p, plane: MirrorPlane) -> Vec3:
    """Mirror image of ``p`` (shape (3,) or (n, 3)) across a vertical plane."""
    p = np.asarray(p, dtype=float)
    out = p.copy()
    if plane.is_vertical:
        out[..., 0] = 2.0 * plane.vertical_x - p[..., 0]
        return out
    a, b = plane.slope, plane.intercept
    s = (a * p[..., 0] - p[..., 2] + b) / (a * a + 1.0)
    out[..., 0] = p[..., 0] - 2.0 * a * s
    out[..., 2] = p[..., 2] + 2.0 * s
    return out


def virtual_positions(points, plane: MirrorPlane) -> NDArray[np.float64]:
    return reflect_point(np.atleast_2d(points), plane)


def path_delay(tx, rx, plane: MirrorPlane | None = None, c: float = SPEED_OF_LIGHT):
    """Propagation delay in seconds, via the virtual source for reflected paths.

    Broadcasts over leading dimensions of ``tx`` and ``rx``.
    """
    tx = np.asarray(tx, dtype=float)
    if plane is not None:
        tx = reflect_point(tx, plane)
    return np.linalg.norm(tx - np.asarray(rx, dtype=float), axis=-1) / c


def specular_point(tx, rx, plane: MirrorPlane) -> Vec3:
    """Reflection point on ``plane`` for a single bounce tx -> plane -> rx."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    image = reflect_point(tx, plane)
    d_img = plane.signed_offset(image)
    d_rx = plane.signed_offset(rx)
    if np.isclose(d_img, d_rx):
        raise GeometryError("source and receiver images on the same side; no specular bounce")
    t = d_img / (d_img - d_rx)
    return image + t * (rx - image)


def observed_angle_phi(rep_a, rep_b) -> float:
    """Directed angle from +X to the XZ projection of the segment a -> b."""
    dx = float(rep_b[0] - rep_a[0])
    dz = float(rep_b[2] - rep_a[2])
    if np.hypot(dx, dz) < 1e-12:
        raise GeometryError("undefined orientation")
    ang = float(np.arctan2(dz, dx))
    return np.pi if ang == -np.pi else ang


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def box_surface_lattice(center, size, pitch, yaw: float = 0.0) -> NDArray[np.float64]:
    """Antenna points on the surface of an X-aligned box, optionally yawed about Y.

    ``pitch`` is a scalar or per-axis spacing target; each edge gets
    ``round(L / pitch) + 1`` evenly spaced samples (at least 2).
    """
    size = np.asarray(size, dtype=float)
    pitch = np.broadcast_to(np.asarray(pitch, dtype=float), (3,))
    counts = [max(2, int(round(L / p)) + 1) for L, p in zip(size, pitch)]
    axes = [np.linspace(-L / 2, L / 2, n) for L, n in zip(size, counts)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    on_surface = np.zeros(gx.shape, dtype=bool)
    for dim, n in enumerate(counts):
        idx = [slice(None)] * 3
        idx[dim] = [0, n - 1]
        on_surface[tuple(idx)] = True
    pts = np.column_stack([gx[on_surface], gy[on_surface], gz[on_surface]])
    if yaw:
        c, s = np.cos(yaw), np.sin(yaw)
        x, z = pts[:, 0].copy(), pts[:, 2].copy()
        pts[:, 0] = c * x - s * z
        pts[:, 2] = s * x + c * z
    return pts + np.asarray(center, dtype=float)


def planar_aperture(center, width: float, height: float, nx: int, ny: int):
    """Regular receive grid in the plane ``z = center[2]``.

    Returns ``(points, xs, ys)``; points are ordered x-major to match
    ``points.reshape(nx, ny, 3)``.
    """
    cx, cy, z0 = (float(v) for v in center)
    xs = cx + (np.linspace(-width / 2, width / 2, nx) if nx > 1 else np.zeros(1))
    ys = cy + (np.linspace(-height / 2, height / 2, ny) if ny > 1 else np.zeros(1))
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z0)])
    return pts, xs, ys


@dataclass
class Scenario:
    """Full scene: receive aperture, transmitting vehicle and the propagation paths.

    ``paths`` lists one entry per resolvable path; ``None`` is the line-of-sight
    path (reflection coefficient 1), a :class:`MirrorPlane` a single bounce.
    """

    rx: NDArray[np.float64]
    rx_xs: NDArray[np.float64]
    rx_ys: NDArray[np.float64]
    z0: float
    tv: NDArray[np.float64]
    rep_a: int
    rep_b: int
    paths: list = field(default_factory=list)
    sigma: float = 0.0
    phase_noise_std: float = 0.0
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        self.rx = np.asarray(self.rx, dtype=float)
        self.tv = np.asarray(self.tv, dtype=float)
        n = len(self.tv)
        if self.rep_a == self.rep_b:
            raise GeometryError("representative antennas must be distinct")
        for idx in (self.rep_a, self.rep_b):
            if not 0 <= idx < n:
                raise GeometryError(f"representative index {idx} out of range for {n} antennas")
        if not np.isfinite(self.sigma):
            raise GeometryError("sigma must be finite")
        if self.phase_noise_std < 0:
            raise GeometryError("phase_noise_std must be >= 0")
        if not np.allclose(self.rx[:, 2], self.z0):
            raise GeometryError("receive aperture must lie in the plane z = z0")

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def gamma(self, path: int) -> complex:
        p = self.paths[path]
        return 1.0 + 0.0j if p is None else complex(p.gamma)

    def virtual_tv(self, path: int) -> NDArray[np.float64]:
        p = self.paths[path]
        return self.tv.copy() if p is None else virtual_positions(self.tv, p)

    def virtual_reps(self, path: int):
        vp = self.virtual_tv(path)
        return vp[self.rep_a], vp[self.rep_b]
