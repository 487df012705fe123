"""End-to-end run: simulate -> synchronise -> image -> map -> score."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imaging, mapping, metrics, signals, sync
from .config import RunConfig

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunReport:
    name: str
    seed: int
    sigma_true: float
    sigma_hat: float
    rep_errors_a: list[float]
    rep_errors_b: list[float]
    e5_objective: float | None
    theta_star: list[float] | None
    hausdorff: float
    directed_hausdorff: float
    per_path_hausdorff: list[float]
    n_mapped_points: int
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def to_json(self, with_timings: bool = False) -> str:
        d = asdict(self)
        if not with_timings:
            d.pop("timings")
        return json.dumps(d, indent=2, sort_keys=True, allow_nan=True)


@dataclass
class RunArtifacts:
    virtual: list[np.ndarray]
    mapped: list[np.ndarray]
    fused: np.ndarray
    truth: np.ndarray
    images: list[imaging.VoxelImage]
    sync: sync.SyncEstimate
    signal: signals.DemodulatedSignal | None = None


class _Timer:
    def __init__(self, timings: dict, stage: str):
        self.timings, self.stage = timings, stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.stage] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.stage, exc) from exc
        return False


def roi_grid(rep_a, rep_b, pitch: float, margin: float,
             max_extent: float | None = None) -> imaging.ImageGrid:
    """Box spanned by the two representative points, widened by ``margin``.

    Voxel centres sit on the global lattice ``pitch * integer`` so that tiny
    changes in the estimated points cannot shift the grid by a fraction of a
    voxel.  ``max_extent`` caps each side of the box (around its centre).
    """
    lo = np.minimum(rep_a, rep_b) - margin
    hi = np.maximum(rep_a, rep_b) + margin
    if max_extent is not None:
        mid = 0.5 * (lo + hi)
        half = np.minimum(0.5 * (hi - lo), 0.5 * max_extent)
        lo, hi = mid - half, mid + half
    lo = np.floor(lo / pitch + 1e-6)
    hi = np.ceil(hi / pitch - 1e-6)
    dims = tuple(int(n) for n in (hi - lo + 1))
    return imaging.ImageGrid(tuple(lo * pitch), (pitch,) * 3, dims)


def sampling_warnings(cfg: RunConfig) -> list[str]:
    scn = cfg.scenario
    dx = float(np.diff(scn.rx_xs).max()) if len(scn.rx_xs) > 1 else 0.0
    dy = float(np.diff(scn.rx_ys).max()) if len(scn.rx_ys) > 1 else 0.0
    r_max = max(float(np.linalg.norm(scn.virtual_tv(l)[:, None, :] - scn.rx[None], axis=-1).max())
                for l in range(scn.n_paths))
    rep = imaging.check_sampling(dx, dy, cfg.sfcw.f_center, cfg.sfcw.delta, r_max)
    return rep.warnings


def run(cfg: RunConfig, keep_images: bool = False) -> tuple[RunReport, RunArtifacts]:
    scn = cfg.scenario
    timings: dict[str, float] = {}
    warnings = sampling_warnings(cfg)
    L = scn.n_paths

    with _Timer(timings, "simulate"):
        sig = signals.simulate(scn, cfg.sfcw, cfg.sw, sigma_tilde=0.0)
        sig = signals.add_phase_noise(sig, scn.phase_noise_std, cfg.seed)

    with _Timer(timings, "sync"):
        est = sync.synchronize(sig, scn.rx, scn.phase_noise_std)
    warnings += est.flags
    err_a, err_b = [], []
    for l in range(L):
        ta, tb = scn.virtual_reps(l)
        err_a.append(float(np.linalg.norm(est.positions_a[l] - ta)))
        err_b.append(float(np.linalg.norm(est.positions_b[l] - tb)))

    vps, images = [], []
    with _Timer(timings, "imaging"):
        freqs = cfg.sfcw.freqs
        for l in range(L):
            y = imaging.resync_phasors(sig.sfcw[l], freqs, est.sigma_hat, sig.sigma_tilde_used)
            span = np.abs(est.positions_a[l] - est.positions_b[l]) + 2 * cfg.imaging.margin
            if np.any(span > cfg.imaging.max_extent):
                warnings.append(f"path {l}: region of interest capped to {cfg.imaging.max_extent} m")
            grid = roi_grid(est.positions_a[l], est.positions_b[l], cfg.imaging.pitch,
                            cfg.imaging.margin, cfg.imaging.max_extent)
            img = imaging.reconstruct_image(y, scn.rx_xs, scn.rx_ys, scn.z0, freqs, scn.gamma(l), grid)
            imaging.threshold_image(img, cfg.imaging.threshold)
            vps.append(mapping.VirtualPosition(l, est.positions_a[l], est.positions_b[l],
                                               img.occupied_points()))
            if keep_images:
                images.append(img)

    theta = None
    objective = None
    with _Timer(timings, "mapping"):
        if L >= 3:
            res = mapping.search_theta1(vps)
            mapped = mapping.map_all(vps, res, los_tol=cfg.imaging.pitch)
            objective = res.objective
            theta = [float(t) for t in res.thetas]
        elif L == 1 and scn.paths[0] is None:
            mapped = [vps[0].occupancy]
        else:
            raise mapping.MappingError("need line of sight alone or at least three paths")
        fused = mapping.fuse_mapped(mapped, cfg.imaging.pitch)

    with _Timer(timings, "score"):
        truth = scn.tv
        h = metrics.hausdorff(fused, truth)
        hd = metrics.directed_hausdorff(fused, truth)
        per_path = [metrics.hausdorff(m, truth) if len(m) else float("inf") for m in mapped]

    report = RunReport(cfg.name, cfg.seed, scn.sigma, est.sigma_hat, err_a, err_b, objective, theta,
                       h, hd, per_path, int(len(fused)), warnings, timings)
    arts = RunArtifacts([v.occupancy for v in vps], mapped, fused, truth, images, est,
                        sig if keep_images else None)
    return report, arts


def write_artifacts(out_dir, report: RunReport, arts: RunArtifacts, dump_tensors: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "timings.json").write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    imaging.write_point_cloud(out / "ground_truth.xyz", arts.truth)
    imaging.write_point_cloud(out / "mapped_rp.xyz", arts.fused)
    for l, pts in enumerate(arts.virtual):
        imaging.write_point_cloud(out / f"vp_{l}.xyz", pts)
    if dump_tensors and arts.signal is not None:
        signals.write_tensor(out / "sfcw.bin", arts.signal.sfcw)
        for l, img in enumerate(arts.images):
            signals.write_tensor(out / f"image_{l}.bin", img.continuous)
