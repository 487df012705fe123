"""JSON scenario files: parsing, validation and ``key=value`` overrides.

A scenario file looks like::

    {
      "name": "example",
      "sv_aperture": {"center": [0, 0, 0], "width_m": 1.0, "height_m": 1.0, "nx": 16, "ny": 16},
      "tv": {"center": [8, 0, 1], "size_m": [3, 1, 0.6], "lattice_pitch_m": [0.2, 0.3333, 0.2],
             "yaw_deg": 0, "rep_a": 0, "rep_b": -1},
      "los": false,
      "mirrors": [{"a": 1.02, "b": 3.0, "gamma_mag": 1.0, "gamma_phase": 0.0},
                  {"vertical_x": -4.0}],
      "sfcw": {"f1_hz": 57e9, "K": 512, "delta_hz": 5.86e6},
      "sw": {"delta_hz": 5.86e6},
      "sigma_s": 2e-8,
      "snr_db": 10,
      "seed": 0,
      "imaging": {"pitch_m": 0.05, "margin_m": 0.5, "threshold": 0.5}
    }

``phase_noise_std_rad`` may replace ``snr_db``.  Negative representative
indices count from the end of the lattice.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    GeometryError,
    MirrorPlane,
    Scenario,
    box_surface_lattice,
    path_delay,
    planar_aperture,
)
from .signals import SfcwSpec, SignalError, SwSpec, snr_to_phase_std


class ConfigError(ValueError):
    """Invalid scenario; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# short override names accepted on the command line
ALIASES = {
    "sigma": "sigma_s",
    "phase_noise_std": "phase_noise_std_rad",
    "K": "sfcw.K",
    "seed": "seed",
}
DERIVED_KEYS = ("tv_distance", "num_mirrors", "M")


@dataclass
class ImagingParams:
    pitch: float = 0.05
    margin: float = 0.5
    threshold: float = 0.5
    max_extent: float = 8.0


@dataclass
class RunConfig:
    name: str
    scenario: Scenario
    sfcw: SfcwSpec
    sw: SwSpec
    seed: int
    imaging: ImagingParams
    raw: dict


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(d: dict, key: str, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if not isinstance(cur.get(p), dict):
            raise ConfigError(key, "unknown key")
        cur = cur[p]
    cur[parts[-1]] = value


def grid_shape_for(M: int) -> tuple[int, int]:
    """Near-square nx x ny factorisation with nx >= ny, both powers of two when M is."""
    if M < 4:
        raise ConfigError("M", "need at least 4 receive antennas")
    ny = int(np.floor(np.sqrt(M)))
    while M % ny:
        ny -= 1
    return M // ny, ny


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key=value`` strings (or ``(key, value)`` pairs) to a copy of ``raw``."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(item, "override must look like key=value")
            key, text = item.split("=", 1)
            value = _parse_value(text)
        else:
            key, value = item
        key = ALIASES.get(key.strip(), key.strip())
        if key == "phase_noise_std_rad":
            out.pop("snr_db", None)
        if key == "snr_db":
            out.pop("phase_noise_std_rad", None)
        if key == "tv_distance":
            out["tv"]["center"] = _place_at_distance(out, float(value))
        elif key == "num_mirrors":
            n = int(value)
            pool = out.get("mirrors", []) + out.get("extra_mirrors", [])
            if not 0 <= n <= len(pool):
                raise ConfigError("num_mirrors", f"{n} requested, {len(pool)} mirrors defined")
            out["mirrors"] = pool[:n]
            out["extra_mirrors"] = pool[n:]
        elif key == "M":
            nx, ny = grid_shape_for(int(value))
            out["sv_aperture"]["nx"], out["sv_aperture"]["ny"] = nx, ny
        else:
            _set_dotted(out, key, value)
    return out


def _place_at_distance(raw: dict, dist: float):
    """Move the vehicle centre along its current bearing to ``dist`` metres from the aperture centre."""
    if dist <= 0:
        raise ConfigError("tv_distance", "must be positive")
    ap = np.asarray(raw["sv_aperture"].get("center", [0, 0, 0]), dtype=float)
    c = np.asarray(raw["tv"]["center"], dtype=float)
    u = c - ap
    n = np.linalg.norm(u)
    if n == 0:
        raise ConfigError("tv.center", "coincides with the aperture centre")
    return list(ap + dist * u / n)


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}" if where else key, "missing")
    return d[key]


def _num(d, key, where, default=None, positive=False, integer=False):
    field = f"{where}.{key}" if where else key
    v = d.get(key, default)
    if v is None:
        raise ConfigError(field, "missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(field, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(field, "expected an integer")
    if not np.isfinite(v):
        raise ConfigError(field, "must be finite")
    if positive and v <= 0:
        raise ConfigError(field, "must be positive")
    return int(v) if integer else float(v)


def _vec3(d, key, where):
    v = _req(d, key, where)
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}", "expected three numbers") from exc
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}.{key}", "expected three finite numbers")
    return arr


def _mirror(m: dict, i: int) -> MirrorPlane:
    where = f"mirrors[{i}]"
    if not isinstance(m, dict):
        raise ConfigError(where, "expected an object")
    mag = _num(m, "gamma_mag", where, 1.0)
    phase = _num(m, "gamma_phase", where, 0.0)
    if not 0 < mag <= 1:
        raise ConfigError(f"{where}.gamma_mag", "must lie in (0, 1]")
    try:
        if "vertical_x" in m:
            return MirrorPlane.from_polar(gamma_mag=mag, gamma_phase=phase,
                                          vertical_x=_num(m, "vertical_x", where))
        return MirrorPlane.from_polar(_num(m, "a", where), _num(m, "b", where), mag, phase)
    except GeometryError as exc:
        raise ConfigError(where, str(exc)) from exc


def build(raw: dict) -> RunConfig:
    """Validate a raw scenario dictionary and build the runtime objects."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    ap = _req(raw, "sv_aperture", "")
    center = np.asarray(ap.get("center", [0.0, 0.0, 0.0]), dtype=float)
    nx = _num(ap, "nx", "sv_aperture", positive=True, integer=True)
    ny = _num(ap, "ny", "sv_aperture", positive=True, integer=True)
    if nx * ny < 4:
        raise ConfigError("sv_aperture", "need at least 4 receive antennas")
    rx, xs, ys = planar_aperture(center, _num(ap, "width_m", "sv_aperture", positive=True),
                                 _num(ap, "height_m", "sv_aperture", positive=True), nx, ny)

    tv = _req(raw, "tv", "")
    size = _vec3(tv, "size_m", "tv")
    pitch = np.broadcast_to(np.asarray(tv.get("lattice_pitch_m", 0.2), dtype=float), (3,))
    if np.any(size <= 0) or np.any(pitch <= 0):
        raise ConfigError("tv", "size_m and lattice_pitch_m must be positive")
    pts = box_surface_lattice(_vec3(tv, "center", "tv"), size, pitch,
                              np.deg2rad(_num(tv, "yaw_deg", "tv", 0.0)))
    ra = _num(tv, "rep_a", "tv", 0, integer=True)
    rb = _num(tv, "rep_b", "tv", -1, integer=True)
    ra, rb = ra % len(pts) if ra < 0 else ra, rb % len(pts) if rb < 0 else rb

    paths = [None] if raw.get("los", False) else []
    paths += [_mirror(m, i) for i, m in enumerate(raw.get("mirrors", []))]
    if not paths:
        raise ConfigError("mirrors", "scenario has no propagation path")

    sigma = _num(raw, "sigma_s", "", 0.0)
    if "phase_noise_std_rad" in raw:
        pn = _num(raw, "phase_noise_std_rad", "")
        if pn < 0:
            raise ConfigError("phase_noise_std_rad", "must be >= 0")
    else:
        snr = raw.get("snr_db", float("inf"))
        if snr in ("inf", "Infinity", None):
            snr = float("inf")
        if isinstance(snr, bool) or not isinstance(snr, (int, float)):
            raise ConfigError("snr_db", "expected a number")
        pn = snr_to_phase_std(float(snr))

    try:
        scn = Scenario(rx, xs, ys, float(center[2]), pts, ra, rb, paths, sigma, pn)
    except GeometryError as exc:
        raise ConfigError("tv", str(exc)) from exc

    sf = _req(raw, "sfcw", "")
    try:
        sfcw = SfcwSpec(_num(sf, "f1_hz", "sfcw", positive=True), _num(sf, "K", "sfcw", integer=True),
                        _num(sf, "delta_hz", "sfcw", positive=True))
    except SignalError as exc:
        raise ConfigError("sfcw", str(exc)) from exc
    swd = raw.get("sw", {})
    sw_delta = _num(swd, "delta_hz", "sw", sfcw.delta, positive=True)
    if "f_a_hz" in swd or "f_b_hz" in swd:
        sw = SwSpec(_num(swd, "f_a_hz", "sw"), _num(swd, "f_b_hz", "sw"), sw_delta)
    else:
        sw = SwSpec.below(sfcw, sw_delta)
    try:
        sw.check_against(sfcw)
    except SignalError as exc:
        raise ConfigError("sw", str(exc)) from exc

    _check_unwrapping(scn, sw.delta)
    im = raw.get("imaging", {})
    params = ImagingParams(_num(im, "pitch_m", "imaging", 0.05, positive=True),
                           _num(im, "margin_m", "imaging", 0.5),
                           _num(im, "threshold", "imaging", 0.5),
                           _num(im, "max_extent_m", "imaging", 8.0, positive=True))
    if not 0 <= params.threshold <= 1:
        raise ConfigError("imaging.threshold", "must lie in [0, 1]")
    seed = _num(raw, "seed", "", 0, integer=True)
    return RunConfig(str(raw.get("name", "scenario")), scn, sfcw, sw, seed, params, raw)


def _check_unwrapping(scn: Scenario, delta: float):
    """Every representative delay must satisfy 0 <= tau - sigma < 1/delta."""
    for l, plane in enumerate(scn.paths):
        for idx in (scn.rep_a, scn.rep_b):
            tau = path_delay(scn.tv[idx], scn.rx, plane, SPEED_OF_LIGHT)
            g = tau - scn.sigma
            if np.any(g < 0) or np.any(g >= 1.0 / delta):
                raise ConfigError("sigma_s", f"tau - sigma leaves [0, 1/delta) on path {l}; "
                                  "the absolute phase cannot be unwrapped")
        if plane is not None:
            vp = scn.virtual_tv(l)
            if np.any(vp[:, 2] <= scn.z0):
                raise ConfigError(f"mirrors[{l - (1 if scn.paths[0] is None else 0)}]",
                                  "virtual vehicle is not in front of the aperture")


def load(path, overrides=None) -> RunConfig:
    return build(apply_overrides(load_json(Path(path)), overrides))
