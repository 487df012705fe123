"""Command line: ``mmpos run``, ``mmpos sweep`` and ``mmpos resolve``.

Exit codes: 0 success, 1 pipeline failure (the failing stage is named),
2 invalid configuration or arguments.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from . import imaging, metrics, pipeline, sync

SWEEP_PARAMS = ("tv_distance", "num_mirrors", "M")


def _load(path, overrides, seed=None):
    ov = list(overrides)
    if seed is not None:
        ov.append(f"seed={seed}")
    return cfgmod.load(path, ov)


def _fail_config(exc: cfgmod.ConfigError):
    click.echo(f"config error: {exc}", err=True)
    sys.exit(2)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Multi-point vehicle positioning over mmWave multipath."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", type=click.Path())
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config value (dotted keys, or sigma, phase_noise_std, tv_distance, "
                   "num_mirrors, M).")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Artifact directory.")
@click.option("--seed", type=int, default=None, help="Noise seed (overrides the config).")
@click.option("--dump-tensors", is_flag=True, help="Also write binary phasor and image dumps.")
def run(config, overrides, out_dir, seed, dump_tensors):
    """Run the full pipeline on one scenario and print the report."""
    try:
        cfg = _load(config, overrides, seed)
    except cfgmod.ConfigError as exc:
        _fail_config(exc)
    try:
        report, arts = pipeline.run(cfg, keep_images=dump_tensors)
    except pipeline.StageError as exc:
        click.echo(f"pipeline failed in stage '{exc.stage}': {exc.cause}", err=True)
        sys.exit(1)
    if out_dir:
        pipeline.write_artifacts(out_dir, report, arts, dump_tensors)
    click.echo(report.to_json())


def _parse_values(param: str, text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"not a number list: {text}") from exc
    if param in ("num_mirrors", "M"):
        return [int(v) for v in vals]
    return vals


@main.command()
@click.argument("config", type=click.Path())
@click.option("--param", required=True, help=f"One of {', '.join(SWEEP_PARAMS)}.")
@click.option("--values", required=True, help="Comma-separated parameter values.")
@click.option("--seeds", type=int, default=20, show_default=True, help="Monte-Carlo seeds per value.")
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_csv", type=click.Path(), default=None, help="CSV path (default stdout).")
@click.option("--mc-runs", type=int, default=1000, show_default=True,
              help="Runs per point for the covariance check (M sweeps only).")
def sweep(config, param, values, seeds, overrides, out_csv, mc_runs):
    """Monte-Carlo sweep of one parameter; emits mean/std Hausdorff per value."""
    if param not in SWEEP_PARAMS:
        click.echo(f"config error: unknown sweep parameter '{param}' (expected one of "
                   f"{', '.join(SWEEP_PARAMS)})", err=True)
        sys.exit(2)
    try:
        vals = _parse_values(param, values)
        base = cfgmod.apply_overrides(cfgmod.load_json(config), overrides)
        rows, failures = run_sweep(base, param, vals, seeds)
    except (cfgmod.ConfigError, click.BadParameter) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    text = metrics.stats_to_csv(rows)
    if param == "M":
        text += "\n" + covariance_table(base, vals, mc_runs)
    for msg in failures:
        click.echo(msg, err=True)
    if out_csv:
        Path(out_csv).write_text(text)
    else:
        click.echo(text, nl=False)


def run_sweep(base: dict, param: str, values, seeds: int):
    """Run every (value, seed) pair; failed runs are reported and left out of the stats."""
    runs, failures = [], []
    for v in values:
        for s in range(seeds):
            cfg = cfgmod.build(cfgmod.apply_overrides(base, [(param, v), ("seed", s)]))
            try:
                rep, _ = pipeline.run(cfg)
            except pipeline.StageError as exc:
                failures.append(f"{param}={v} seed={s}: stage '{exc.stage}' failed: {exc.cause}")
                continue
            runs.append((v, rep.hausdorff, rep.directed_hausdorff))
    return metrics.sweep_stats(runs), failures


def covariance_table(base: dict, values, runs: int) -> str:
    """Empirical vs analytic trace of the representative-antenna covariance per aperture size."""
    lines = ["M,empirical_trace,analytic_trace"]
    for M in values:
        cfg = cfgmod.build(cfgmod.apply_overrides(base, [("M", M)]))
        scn = cfg.scenario
        x = scn.virtual_reps(0)[0]
        sz = scn.phase_noise_std
        if sz == 0:
            emp = ana = 0.0
        else:
            emp = float(np.trace(sync.monte_carlo_covariance(x, scn.rx, sz, cfg.sw.delta, runs, cfg.seed)))
            ana = float(np.trace(sync.sync_covariance(x, scn.rx, sz, cfg.sw.delta)))
        lines.append(f"{M},{emp:.9g},{ana:.9g}")
    return "\n".join(lines) + "\n"


@main.command()
@click.argument("config", type=click.Path())
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE")
def resolve(config, overrides):
    """Print the resolution and sampling report for a scenario."""
    try:
        cfg = _load(config, overrides)
    except cfgmod.ConfigError as exc:
        _fail_config(exc)
    click.echo(json.dumps(resolution_report(cfg), indent=2, sort_keys=True))


def resolution_report(cfg) -> dict:
    scn = cfg.scenario
    f_c = cfg.sfcw.f_center
    dx = float(np.diff(scn.rx_xs).max()) if len(scn.rx_xs) > 1 else 0.0
    dy = float(np.diff(scn.rx_ys).max()) if len(scn.rx_ys) > 1 else 0.0
    size = float(max(np.ptp(scn.rx_xs), np.ptp(scn.rx_ys)))
    paths = []
    r_max = 0.0
    for l in range(scn.n_paths):
        vp = scn.virtual_tv(l)
        r = np.linalg.norm(vp.mean(axis=0) - scn.rx.mean(axis=0))
        r_max = max(r_max, float(np.linalg.norm(vp[:, None, :] - scn.rx[None], axis=-1).max()))
        paths.append({"path": l, "range_m": float(r),
                      "azimuth_resolution_m": imaging.azimuth_resolution(f_c, size, float(r))})
    rep = imaging.check_sampling(dx, dy, f_c, cfg.sfcw.delta, r_max)
    return {
        "range_resolution_m": imaging.range_resolution(cfg.sfcw.f1, cfg.sfcw.f_last),
        "aperture_size_m": size,
        "paths": paths,
        "spatial_spacing_m": rep.spatial_spacing,
        "spatial_limit_m": rep.spatial_limit,
        "frequency_step_hz": rep.freq_gap,
        "frequency_limit_hz": rep.freq_limit,
        "max_range_m": r_max,
        "warnings": rep.warnings,
    }


if __name__ == "__main__":  # pragma: no cover
    main()
