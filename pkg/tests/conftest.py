from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mmpos.geometry import MirrorPlane, Scenario, box_surface_lattice, planar_aperture

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def small_scene(paths=None, sigma=2e-8, noise=0.0, nx=4, ny=4, width=0.06, tv_center=(8.0, 0.0, 1.0)):
    """Compact version of the three-mirror street scene, cheap enough for unit tests."""
    rx, xs, ys = planar_aperture((0.0, 0.0, 0.0), width, width, nx, ny)
    tv = box_surface_lattice(tv_center, (3.0, 1.0, 0.6), (0.5, 0.5, 0.3))
    if paths is None:
        paths = [MirrorPlane(1.02, 3.0), MirrorPlane(0.25, 3.25), MirrorPlane(3.0, 4.0)]
    return Scenario(rx, xs, ys, 0.0, tv, 0, len(tv) - 1, paths, sigma, noise)


def xz_reflect_oracle(p, a, b):
    """Reflection across z = a x + b by translating, rotating the line onto the x axis and flipping."""
    p = np.asarray(p, dtype=float)
    ang = np.arctan(a)
    c, s = np.cos(-ang), np.sin(-ang)
    x, z = p[0], p[2] - b
    xr, zr = c * x - s * z, s * x + c * z
    zr = -zr
    c2, s2 = np.cos(ang), np.sin(ang)
    return np.array([c2 * xr - s2 * zr, p[1], s2 * xr + c2 * zr + b])


@pytest.fixture
def scene3():
    return small_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
