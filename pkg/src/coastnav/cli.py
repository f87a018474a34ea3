"""Command-line entry point: ``coastnav {simulate,mc,tune,fit-lfm,calibrate}``.

Every subcommand reads a JSON mission config and writes CSV/JSON files into
``--out``.  Exit status is 1 for configuration errors and 2 for failures at
run time.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .chart import ChartError, load_chart
from .detect import (DetectorConfig, calibrate_threshold, gaussian_glrt_series, kde_glrt_series,
                     read_residual_csv, write_trace_csv)
from .geodesy import GeodeticPoint, Pose
from .lfm import LfmParams, PsoConfig, fit_lfm_em
from .radarsim import RadarNoiseParams, read_scan_csv
from .scenario import (BimodalResidualModel, FaultSpec, Mission, aggregate, calibrate_mission,
                       grid_points, monte_carlo, nominal_residuals, run_mission, tune_detector)
from .synthetic import waypoint_trajectory

DEFAULT_SAMPLE_PERIOD = 4.96


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


# --- config parsing ------------------------------------------------------------

def _build(cls, doc: dict | None, where: str, **overrides):
    doc = dict(doc or {})
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    doc.update(overrides)
    for k, v in doc.items():
        if isinstance(v, list):
            doc[k] = tuple(v)
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _radar(doc: dict) -> RadarNoiseParams:
    doc = dict(doc or {})
    if "sigma_bearing_deg" in doc:
        doc["sigma_bearing"] = math.radians(doc.pop("sigma_bearing_deg"))
    return _build(RadarNoiseParams, doc, "radar")


def _detector(doc: dict, sample_period: float) -> DetectorConfig:
    doc = dict(doc or {})
    minutes = {k: doc.pop(k) for k in ("mu_min", "lam_min", "o_min") if k in doc}
    doc.pop("p_fa", None)
    doc.pop("calibration_runs", None)
    if minutes:
        if len(minutes) != 3:
            raise ConfigError("detector: give all of mu_min, lam_min, o_min")
        try:
            base = DetectorConfig.from_minutes(minutes["mu_min"], minutes["lam_min"],
                                               minutes["o_min"], sample_period)
        except ValueError as exc:
            raise ConfigError(f"detector: {exc}") from exc
        doc = {"mu": base.mu, "lam": base.lam, "o": base.o, **doc}
    for k in ("gamma_gauss", "gamma_kde"):
        if doc.get(k) is None:
            doc.pop(k, None)
    return _build(DetectorConfig, doc, "detector")


def _trajectory(doc: dict, sample_period: float):
    if not doc:
        raise ConfigError("trajectory is required")
    if "samples" in doc:
        rows = np.asarray(doc["samples"], dtype=float)
        if rows.ndim != 2 or rows.shape[1] != 4:
            raise ConfigError("trajectory.samples rows must be [t_s, lat_deg, lon_deg, heading_deg]")
        try:
            poses = [Pose(GeodeticPoint.from_degrees(a, b), math.radians(c))
                     for a, b, c in rows[:, 1:]]
        except ValueError as exc:
            raise ConfigError(f"trajectory: {exc}") from exc
        return rows[:, 0], poses
    try:
        origin = GeodeticPoint.from_degrees(*doc["origin_deg"])
        return waypoint_trajectory(origin, doc["waypoints_ned_m"], float(doc["speed_mps"]),
                                   sample_period, doc.get("duration_s"))
    except KeyError as exc:
        raise ConfigError(f"trajectory: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"trajectory: {exc}") from exc


def _fault(doc: dict | None) -> FaultSpec:
    doc = dict(doc or {"kind": "none"})
    renamed = {"kind": doc.pop("kind", "none"), "t_onset": doc.pop("t_onset_s", 0.0),
               "f_slope": doc.pop("f_slope_m_per_min", 20.0), "side": doc.pop("side", "left")}
    if doc:
        raise ConfigError(f"fault: unknown keys {sorted(doc)}")
    return _build(FaultSpec, renamed, "fault")


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    doc["_base_dir"] = str(path.parent)
    return doc


def mission_from_config(doc: dict, seed: int | None = None) -> Mission:
    sample_period = float(doc.get("sample_period_s", DEFAULT_SAMPLE_PERIOD))
    times, poses = _trajectory(doc.get("trajectory"), sample_period)
    chart = None
    if doc.get("chart_path"):
        chart_path = Path(doc["_base_dir"]) / doc["chart_path"]
        try:
            chart = load_chart(chart_path)
        except (OSError, ChartError, ValueError) as exc:
            raise ConfigError(f"chart {chart_path}: {exc}") from exc
    res = dict(doc.get("residual") or {})
    mode = res.pop("mode", "model")
    extra = {k: res.pop(k) for k in ("gnss_sigma", "tail_margin") if k in res}
    kwargs = dict(
        times=times, poses=poses, chart=chart,
        radar=_radar(doc.get("radar")),
        lfm=_build(LfmParams, doc.get("lfm"), "lfm"),
        pso=_build(PsoConfig, doc.get("pso") or {"n_particles": 24, "n_iters": 30}, "pso"),
        detector=_detector(doc.get("detector"), sample_period),
        rng_seed=int(doc.get("seed", 0) if seed is None else seed),
        residual_mode=mode,
        residual_model=_build(BimodalResidualModel, res, "residual"),
        **extra,
    )
    try:
        return Mission(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"mission: {exc}") from exc


def _ensure_calibrated(m: Mission, doc: dict) -> Mission:
    det = doc.get("detector") or {}
    if det.get("gamma_gauss") is not None and det.get("gamma_kde") is not None:
        return m
    return calibrate_mission(m, float(det.get("p_fa", 1e-3)),
                             int(det.get("calibration_runs", 4)))


# --- outputs -----------------------------------------------------------------------

def _write_json(obj, path: Path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _detector_json(cfg: DetectorConfig) -> dict:
    d = asdict(cfg)
    d["gamma_gauss"] = _finite(d["gamma_gauss"])
    d["gamma_kde"] = _finite(d["gamma_kde"])
    return d


# --- subcommands ------------------------------------------------------------------

def cmd_simulate(args, doc) -> None:
    m = _ensure_calibrated(mission_from_config(doc, args.seed), doc)
    res = run_mission(m, _fault(doc.get("fault")))
    write_trace_csv(res.decisions(), args.out / "trace.csv")
    _write_json(res.summary(), args.out / "summary.json")


def cmd_mc(args, doc) -> None:
    m = _ensure_calibrated(mission_from_config(doc, args.seed), doc)
    template = _fault(doc.get("fault"))
    if template.kind == "none":
        raise ConfigError("mc needs a spoof or jam fault template")
    results = monte_carlo(m, template, args.n, m.rng_seed, jobs=args.jobs)
    with open(args.out / "runs.csv", "w", newline="") as f:
        w = csv.writer(f)
        keys = ("t_onset_s", "t_d_gauss_s", "t_d_kde_s", "t_d_combined_s", "J_contribution")
        w.writerow(("run",) + keys)
        for i, r in enumerate(results):
            s = r.summary()
            w.writerow([i] + ["" if s[k] is None else repr(float(s[k])) for k in keys])
    agg = aggregate(results)
    agg["detector"] = _detector_json(m.detector)
    agg["seed"] = m.rng_seed
    _write_json(agg, args.out / "aggregate.json")


def _load_grid(path) -> dict:
    try:
        with open(path) as f:
            g = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"grid {path}: {exc}") from exc
    missing = {"mu", "lam", "o", "h"} - set(g)
    if missing:
        raise ConfigError(f"grid {path}: missing keys {sorted(missing)}")
    return g


def cmd_tune(args, doc) -> None:
    if args.grid is None:
        raise ConfigError("tune needs --grid")
    g = _load_grid(args.grid)
    m = mission_from_config(doc, args.seed)
    template = _fault(doc.get("fault"))
    if template.kind == "none":
        template = FaultSpec("spoof", 0.0, 20.0)
    p_fa = float((doc.get("detector") or {}).get("p_fa", 1e-3))
    res = tune_detector(m, grid_points(g["mu"], g["lam"], g["o"], g["h"]), args.n,
                        m.rng_seed, p_fa=p_fa, template=template)
    _write_json({
        "gauss": {"mu": res.best_gauss.mu, "lam": res.best_gauss.lam, "o": res.best_gauss.o,
                  "J": res.j_gauss[res.best_gauss]},
        "kde": {"mu": res.best_kde.mu, "lam": res.best_kde.lam, "o": res.best_kde.o,
                "h": res.best_kde.h, "J": res.j_kde[res.best_kde]},
        "n_per_point": args.n, "p_fa": p_fa,
    }, args.out / "best.json")


def read_em_dataset(directory, rho_max: float):
    """Pairs of (pose, scan) from ``poses.csv`` and ``scan_<index>.csv`` files."""
    directory = Path(directory)
    poses_path = directory / "poses.csv"
    if not poses_path.exists():
        raise ConfigError(f"{poses_path} not found")
    out = []
    with open(poses_path, newline="") as f:
        for row in csv.DictReader(f):
            pose = Pose(GeodeticPoint.from_degrees(float(row["lat_deg"]), float(row["lon_deg"])),
                        math.radians(float(row["heading_deg"])))
            scan = read_scan_csv(directory / f"scan_{row['index']}.csv", rho_max,
                                 float(row.get("t_s") or 0.0))
            out.append((pose, scan))
    return out


def cmd_fit_lfm(args, doc) -> None:
    if not doc.get("chart_path") or not doc.get("dataset_dir"):
        raise ConfigError("fit-lfm needs chart_path and dataset_dir")
    try:
        chart = load_chart(Path(doc["_base_dir"]) / doc["chart_path"])
    except (OSError, ChartError, ValueError) as exc:
        raise ConfigError(f"chart: {exc}") from exc
    init = _build(LfmParams, doc.get("lfm"), "lfm")
    data = read_em_dataset(Path(doc["_base_dir"]) / doc["dataset_dir"], init.rho_max)
    fit = fit_lfm_em(data, chart, init)
    _write_json({**asdict(fit.params), "converged": fit.converged, "n_iter": fit.n_iter,
                 "log_likelihood": fit.log_likelihoods[-1]}, args.out / "lfm.json")


def cmd_calibrate(args, doc) -> None:
    m = mission_from_config(doc, args.seed)
    if args.residuals is not None:
        streams = [np.array([s.r for s in read_residual_csv(args.residuals)])]
    else:
        # each nominal run yields one statistic per sample after the warm-up
        per_run = len(m.times) - m.detector.span + 1
        n_runs = max(1, math.ceil(args.n / per_run)) if args.n else 4
        streams = nominal_residuals(m, n_runs, m.rng_seed)
    gg = np.concatenate([gaussian_glrt_series(r, m.detector) for r in streams])
    gk = np.concatenate([kde_glrt_series(r, m.detector) for r in streams])
    out = {"p_fa": args.p_fa}
    for name, g in (("gauss", gg), ("kde", gk)):
        th = calibrate_threshold(g, args.p_fa)
        out[name] = {"gamma": th.gamma, "n_samples": th.n_samples,
                     "extrapolated": th.extrapolated}
    out["detector"] = _detector_json(m.detector.with_thresholds(out["gauss"]["gamma"],
                                                                out["kde"]["gamma"]))
    _write_json(out, args.out / "thresholds.json")


COMMANDS = {"simulate": cmd_simulate, "mc": cmd_mc, "tune": cmd_tune,
            "fit-lfm": cmd_fit_lfm, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coastnav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, required=True)
        s.add_argument("--out", type=Path, required=True)
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        if name == "mc":
            s.add_argument("--n", type=int, default=100)
        if name == "tune":
            s.add_argument("--grid", type=Path, default=None)
            s.add_argument("--n", type=int, default=20, help="fault realizations per grid point")
        if name == "calibrate":
            s.add_argument("--p-fa", type=float, default=1e-3)
            s.add_argument("--n", type=int, default=None,
                           help="minimum number of H0 statistic samples")
            s.add_argument("--residuals", type=Path, default=None,
                           help="calibrate on a residual CSV instead of simulating")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if getattr(args, "n", None) is not None and args.n < 1:
            raise ConfigError("--n must be >= 1")
        if getattr(args, "p_fa", None) is not None and not 0.0 <= args.p_fa <= 1.0:
            raise ConfigError("--p-fa must be a probability")
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {args.out}: {exc}") from exc
        COMMANDS[args.command](args, doc)
    except ConfigError as exc:
        print(f"coastnav: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"coastnav: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
