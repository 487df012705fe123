"""Forward model: demodulated SFCW and two-tone signature-waveform phasors.

Demodulating a pure tone leaves a time-independent phasor, so nothing is
sampled in time; each path/antenna/frequency entry is written in closed form.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .geometry import Scenario, path_delay


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class SfcwSpec:
    f1: float
    K: int
    delta: float

    def __post_init__(self):
        if self.f1 <= 0 or self.K < 2 or self.delta <= 0:
            raise SignalError("SFCW needs f1 > 0, K >= 2, delta > 0")

    @property
    def freqs(self) -> NDArray[np.float64]:
        return self.f1 + np.arange(self.K) * self.delta

    @property
    def f_last(self) -> float:
        return self.f1 + (self.K - 1) * self.delta

    @property
    def f_center(self) -> float:
        return 0.5 * (self.f1 + self.f_last)


@dataclass(frozen=True)
class SwSpec:
    """Two-tone signature waveforms: antenna a at (f_a, f_a+delta), b at (f_b, f_b+delta)."""

    f_a: float
    f_b: float
    delta: float

    def check_against(self, sfcw: SfcwSpec):
        if not (self.f_a < self.f_a + self.delta < self.f_b < self.f_b + self.delta < sfcw.f1):
            raise SignalError("SW bands overlap SFCW")

    @classmethod
    def below(cls, sfcw: SfcwSpec, delta: float | None = None) -> "SwSpec":
        """Tones stacked just under f1: a at f1 - 4*delta, b at f1 - 2*delta."""
        d = sfcw.delta if delta is None else delta
        return cls(sfcw.f1 - 4 * d, sfcw.f1 - 2 * d, d)


@dataclass
class DemodulatedSignal:
    """Per-path phasors.

    ``sfcw[l, m, k]`` is the SFCW tone k at receive antenna m on path l;
    ``sw_alpha[l, m, t]`` / ``sw_beta`` hold tone t of the signature waveform
    from representative antenna a / b.
    """

    sfcw: NDArray[np.complex128] | None
    sw_alpha: NDArray[np.complex128] | None
    sw_beta: NDArray[np.complex128] | None
    sigma_tilde_used: float
    sfcw_spec: SfcwSpec | None = None
    sw_spec: SwSpec | None = None


def _split(a):
    t = 134217729.0 * a  # 2**27 + 1
    hi = t - (t - a)
    return hi, a - hi


def frac_cycles(f, g):
    """Fractional part of ``f * g`` with the rounding error of the product recovered.

    Uses the error-free two-product (Dekker split), so the result is accurate
    to ~1e-16 cycles even when ``f * g`` is thousands of cycles.  Two tones
    sharing the same ``g`` therefore keep their phase difference exact.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    p = f * g
    fh, fl = _split(f)
    gh, gl = _split(g)
    err = ((fh * gh - p) + fh * gl + fl * gh) + fl * gl
    return (p - np.round(p)) + err


def _cycles_to_phasor(cycles):
    return np.exp(2j * np.pi * cycles)


def simulate_sfcw(scn: Scenario, spec: SfcwSpec, sigma_tilde: float = 0.0,
                  chunk: int = 32) -> DemodulatedSignal:
    """y[l, m, k] = Gamma_l * sum_n exp(j 2 pi f_k (sigma - sigma_tilde - tau_nm^l))."""
    f = spec.freqs
    M = len(scn.rx)
    out = np.zeros((scn.n_paths, M, spec.K), dtype=np.complex128)
    gap = scn.sigma - sigma_tilde
    for l, plane in enumerate(scn.paths):
        for m0 in range(0, M, chunk):
            rx = scn.rx[m0:m0 + chunk]
            tau = path_delay(scn.tv[:, None, :], rx[None, :, :], plane, scn.c)  # (N, m)
            cyc = frac_cycles(f[None, None, :], gap - tau[:, :, None])
            out[l, m0:m0 + chunk] = _cycles_to_phasor(cyc).sum(axis=0)
        out[l] *= scn.gamma(l)
    return DemodulatedSignal(out, None, None, sigma_tilde, sfcw_spec=spec)


def simulate_sw(scn: Scenario, spec: SwSpec, sfcw: SfcwSpec | None = None) -> DemodulatedSignal:
    """Two-tone phasors for representative antennas a and b on every path."""
    if sfcw is not None:
        spec.check_against(sfcw)
    elif not (spec.f_a < spec.f_a + spec.delta < spec.f_b < spec.f_b + spec.delta):
        raise SignalError("SW bands overlap SFCW")
    tones_a = np.array([spec.f_a, spec.f_a + spec.delta])
    tones_b = np.array([spec.f_b, spec.f_b + spec.delta])
    shape = (scn.n_paths, len(scn.rx), 2)
    alpha = np.empty(shape, dtype=np.complex128)
    beta = np.empty(shape, dtype=np.complex128)
    for l, plane in enumerate(scn.paths):
        g = scn.gamma(l)
        tau_a = path_delay(scn.tv[scn.rep_a], scn.rx, plane, scn.c)
        tau_b = path_delay(scn.tv[scn.rep_b], scn.rx, plane, scn.c)
        alpha[l] = g * _cycles_to_phasor(frac_cycles(tones_a[None, :], (scn.sigma - tau_a)[:, None]))
        beta[l] = g * _cycles_to_phasor(frac_cycles(tones_b[None, :], (scn.sigma - tau_b)[:, None]))
    return DemodulatedSignal(None, alpha, beta, 0.0, sw_spec=spec)


def simulate(scn: Scenario, sfcw: SfcwSpec, sw: SwSpec, sigma_tilde: float = 0.0) -> DemodulatedSignal:
    a = simulate_sfcw(scn, sfcw, sigma_tilde)
    b = simulate_sw(scn, sw, sfcw)
    return DemodulatedSignal(a.sfcw, b.sw_alpha, b.sw_beta, sigma_tilde, sfcw, sw)


# --- phase noise -----------------------------------------------------------

_STREAMS = {"sfcw": 1, "sw_alpha": 2, "sw_beta": 3}


def counter_normals(seed: int, stream: int, start: int, count: int) -> NDArray[np.float64]:
    """Standard normals for flat entry indices ``start .. start+count-1``.

    Entry i is a Box-Muller transform of raw Philox outputs 2i and 2i+1, so
    any slice of the tensor can be drawn independently and still match the
    serial fill bit for bit.
    """
    if count <= 0:
        return np.empty(0)
    first_block = start // 2
    bg = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream], counter=first_block)
    skip = 2 * (start - 2 * first_block)
    raw = bg.random_raw(skip + 2 * count)[skip:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    u1, u2 = u[0::2], u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def phase_jitter(seed: int, name: str, shape) -> NDArray[np.float64]:
    n = int(np.prod(shape))
    return counter_normals(seed, _STREAMS[name], 0, n).reshape(shape)


def add_phase_noise(sig: DemodulatedSignal, sigma_z: float, seed: int) -> DemodulatedSignal:
    """Multiply every phasor by exp(j*eps), eps ~ N(0, sigma_z^2) i.i.d."""
    if sigma_z < 0:
        raise SignalError("sigma_z must be >= 0")
    if sigma_z == 0:
        return replace(sig)
    noisy = {}
    for name in ("sfcw", "sw_alpha", "sw_beta"):
        arr = getattr(sig, name)
        if arr is None:
            noisy[name] = None
            continue
        eps = sigma_z * phase_jitter(seed, name, arr.shape)
        noisy[name] = arr * np.exp(1j * eps)
    return replace(sig, **noisy)


def snr_to_phase_std(snr_db: float) -> float:
    """Small-noise phase jitter of a unit phasor under complex white noise."""
    if np.isposinf(snr_db):
        return 0.0
    if not np.isfinite(snr_db):
        raise SignalError("snr_db must be finite or +inf")
    return float(np.sqrt(1.0 / (2.0 * 10.0 ** (snr_db / 10.0))))


# --- binary tensor dump ----------------------------------------------------
# 32-byte header: magic b"MMPT", uint32 version, uint32 ndim, then up to five
# uint32 dims (unused dims are 0), all little-endian.  Payload is complex64 LE
# in C order.

TENSOR_MAGIC = b"MMPT"
_HEADER = struct.Struct("<4sII5I")


def write_tensor(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim > 5:
        raise SignalError("tensor dump supports at most 5 dimensions")
    dims = list(arr.shape) + [0] * (5 - arr.ndim)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, 1, arr.ndim, *dims))
        fh.write(np.ascontiguousarray(arr, dtype="<c8").tobytes())


def read_tensor(path) -> NDArray[np.complex64]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, ndim, *dims = _HEADER.unpack(head)
        if magic != TENSOR_MAGIC or version != 1:
            raise SignalError(f"{path}: not a tensor dump")
        shape = tuple(dims[:ndim])
        data = np.frombuffer(fh.read(), dtype="<c8")
    return data.reshape(shape)
