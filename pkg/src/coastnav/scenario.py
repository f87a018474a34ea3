"""Missions, GNSS fault injection, Monte Carlo detection studies and tuning.

A mission is a time-indexed true trajectory.  Each run produces a residual
stream (corrupted GNSS against the radar position estimate) and feeds it to
the combined detector.  The radar estimate comes either from the full first
stage (``residual_mode="estimator"``) or from a statistical error model of
the estimator (``residual_mode="model"``), which is what makes large Monte
Carlo studies affordable.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .chart import Chart, extract_shoreline
from .detect import (ChangeDetector, Decision, DetectorConfig, ResidualSample, Threshold,
                     calibrate_threshold, gaussian_glrt_series, kde_glrt_series, residual)
from .geodesy import GeodeticPoint, Pose, difference_arrays, shift_arrays, to_ned_arrays
from .lfm import LfmParams, PsoConfig, estimate_first_stage
from .radarsim import RadarNoiseParams, cast_scan

FAULT_KINDS = ("spoof", "jam", "none")
DETECTORS = ("gauss", "kde", "combined")


@dataclass(frozen=True)
class FaultSpec:
    kind: str = "none"
    t_onset: float = 0.0
    f_slope: float = 20.0  # m/min
    side: str = "left"

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"fault kind must be one of {FAULT_KINDS}, got {self.kind!r}")
        if self.kind == "spoof" and not self.f_slope > 0:
            raise ValueError("spoof slope must be positive")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")

    def offset(self, t) -> np.ndarray:
        """Spoof displacement magnitude in metres at times ``t``."""
        t = np.asarray(t, dtype=float)
        if self.kind != "spoof":
            return np.zeros_like(t)
        return np.where(t >= self.t_onset, self.f_slope / 60.0 * (t - self.t_onset), 0.0)


@dataclass(frozen=True)
class BimodalResidualModel:
    """Error of the radar position estimate, relative to the ship's course.

    The error magnitude is a two-component Gaussian mixture (a main mode and
    a smaller far mode, as seen in nominal residual histograms).  Its
    direction scatters around the course by ``direction_spread`` radians.
    """

    means: tuple[float, float] = (42.0, 114.0)
    stds: tuple[float, float] = (9.0, 7.5)
    far_weight: float = 0.22
    direction_spread: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.far_weight <= 1.0:
            raise ValueError("far_weight must be a probability")
        if min(self.stds) < 0 or self.direction_spread < 0:
            raise ValueError("spreads must be non-negative")

    def sample(self, rng: np.random.Generator, course) -> np.ndarray:
        """NED error vectors, one per course angle."""
        course = np.asarray(course, dtype=float)
        n = course.shape[0]
        far = rng.random(n) < self.far_weight
        mag = np.where(far, rng.normal(self.means[1], self.stds[1], n),
                       rng.normal(self.means[0], self.stds[0], n))
        ang = course + rng.normal(0.0, self.direction_spread, n)
        return np.column_stack([mag * np.cos(ang), mag * np.sin(ang)])


@dataclass(frozen=True, eq=False)
class Mission:
    times: np.ndarray
    poses: tuple[Pose, ...]
    chart: Chart | None = None
    radar: RadarNoiseParams = RadarNoiseParams()
    lfm: LfmParams = LfmParams()
    pso: PsoConfig = PsoConfig(n_particles=24, n_iters=30)
    detector: DetectorConfig = DetectorConfig()
    rng_seed: int = 0
    residual_mode: str = "model"
    residual_model: BimodalResidualModel = BimodalResidualModel()
    gnss_sigma: float = 1.5
    heading_sigma: float = math.radians(0.5)
    spacing: float = 5.0
    tail_margin: float = 0.0

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(t) != len(self.poses):
            raise ValueError("times and poses must have equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("mission timestamps must be strictly increasing")
        if len(t) < self.detector.span:
            raise ValueError(f"mission has {len(t)} samples, detector needs "
                             f"{self.detector.span}")
        if self.residual_mode not in ("model", "estimator"):
            raise ValueError(f"unknown residual mode {self.residual_mode!r}")
        if self.residual_mode == "estimator" and self.chart is None:
            raise ValueError("estimator residuals need a chart")
        if self.gnss_sigma < 0 or self.heading_sigma < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def sample_period(self) -> float:
        return float(np.mean(np.diff(self.times)))

    @property
    def courses(self) -> np.ndarray:
        return np.array([p.heading for p in self.poses])

    def onset_window(self) -> tuple[float, float]:
        """Range of admissible fault onsets: after warm-up, before the tail margin."""
        lo = float(self.times[self.detector.span - 1])
        hi = float(self.times[-1]) - self.tail_margin
        if hi < lo:
            raise ValueError("mission too short for the warm-up and tail margin")
        return lo, hi

    def with_detector(self, detector: DetectorConfig) -> Mission:
        return replace(self, detector=detector)


@dataclass(frozen=True, eq=False)
class RunResult:
    times: np.ndarray
    residuals: np.ndarray
    g_gauss: np.ndarray
    g_kde: np.ndarray
    alarm: np.ndarray
    source: tuple[str, ...]
    fault: FaultSpec
    alarm_time_gauss: float | None
    alarm_time_kde: float | None
    seed: int | None = None

    def _t_d(self, t_alarm):
        return None if t_alarm is None else t_alarm - self.fault.t_onset

    @property
    def t_d_gauss(self) -> float | None:
        return self._t_d(self.alarm_time_gauss)

    @property
    def t_d_kde(self) -> float | None:
        return self._t_d(self.alarm_time_kde)

    @property
    def t_d_combined(self) -> float | None:
        present = [t for t in (self.t_d_gauss, self.t_d_kde) if t is not None]
        return min(present) if present else None

    def t_d(self, detector: str) -> float | None:
        return {"gauss": self.t_d_gauss, "kde": self.t_d_kde,
                "combined": self.t_d_combined}[detector]

    @property
    def remaining(self) -> float:
        return float(self.times[-1]) - self.fault.t_onset

    def decisions(self) -> list[Decision]:
        warming = np.isnan(self.g_gauss)
        return [Decision(float(t), float(r), "warming-up" if w else ("alarm" if a else "nominal"),
                         float(g), float(k), False, False, bool(a), s)
                for t, r, g, k, a, s, w in zip(self.times, self.residuals, self.g_gauss,
                                               self.g_kde, self.alarm, self.source, warming)]

    def summary(self) -> dict:
        return {
            "t_onset_s": None if self.fault.kind == "none" else self.fault.t_onset,
            "t_d_gauss_s": self.t_d_gauss,
            "t_d_kde_s": self.t_d_kde,
            "t_d_combined_s": self.t_d_combined,
            "J_contribution": None if self.fault.kind == "none"
            else penalized_t_d(self, "combined") ** 2,
        }


# --- fault injection ---------------------------------------------------------------

def _left_normal(course: np.ndarray, side: str) -> np.ndarray:
    ang = course - math.pi / 2 if side == "left" else course + math.pi / 2
    return np.column_stack([np.cos(ang), np.sin(ang)])


def _inject_arrays(lat, lon, times, courses, spec: FaultSpec):
    times = np.asarray(times, dtype=float)
    if spec.kind == "none":
        return lat, lon
    if spec.kind == "jam":
        held = max(int(np.searchsorted(times, spec.t_onset, side="right")) - 1, 0)
        after = times >= spec.t_onset
        return np.where(after, lat[held], lat), np.where(after, lon[held], lon)
    f = spec.offset(times)
    normal = _left_normal(np.asarray(courses, dtype=float), spec.side)
    s_lat, s_lon = shift_arrays(lat, lon, f * normal[:, 0], f * normal[:, 1])
    return np.where(f > 0, s_lat, lat), np.where(f > 0, s_lon, lon)


def inject_fault(gnss_track, times, courses, spec: FaultSpec) -> list[GeodeticPoint]:
    """Corrupt a GNSS track.

    ``spoof`` shifts each fix by ``f_slope * (t - t_onset)`` perpendicular to
    the instantaneous course (to the left by default); ``jam`` keeps
    reporting the last fix at or before the onset.
    """
    track = list(gnss_track)
    if spec.kind == "none":
        return track
    lat = np.array([p.lat for p in track])
    lon = np.array([p.lon for p in track])
    lat, lon = _inject_arrays(lat, lon, times, courses, spec)
    return [p if (a == p.lat and b == p.lon) else GeodeticPoint(float(a), float(b))
            for p, a, b in zip(track, lat, lon)]


# --- residual streams ----------------------------------------------------------------

def residual_stream(m: Mission, spec: FaultSpec, rng: np.random.Generator) -> np.ndarray:
    """Residual between the corrupted GNSS track and the radar estimate."""
    lat = np.array([p.position.lat for p in m.poses])
    lon = np.array([p.position.lon for p in m.poses])
    n = len(lat)
    noise = rng.normal(0.0, m.gnss_sigma, (n, 2))
    g_lat, g_lon = shift_arrays(lat, lon, noise[:, 0], noise[:, 1])
    g_lat, g_lon = _inject_arrays(g_lat, g_lon, m.times, m.courses, spec)
    if m.residual_mode == "model":
        err = m.residual_model.sample(rng, m.courses)
        r_lat, r_lon = shift_arrays(lat, lon, err[:, 0], err[:, 1])
        dn, de = difference_arrays(r_lat, r_lon, g_lat, g_lon)
        return np.hypot(dn, de)

    out = np.empty(n)
    reach = m.radar.rho_max + max(abs(v) for v in (*m.pso.lower[:2], *m.pso.upper[:2]))
    for k, pose in enumerate(m.poses):
        g = GeodeticPoint(float(g_lat[k]), float(g_lon[k]))
        scan = cast_scan(pose, _samples_near(m, pose.position), m.radar, rng,
                         timestamp=float(m.times[k]))
        prior = Pose(g, pose.heading + rng.normal(0.0, m.heading_sigma))
        samples = extract_shoreline(m.chart, prior.position, reach + 4 * m.lfm.sigma_lfm,
                                    m.spacing)
        est = estimate_first_stage(scan, prior, m.chart, m.lfm,
                                   m.pso.with_seed(int(rng.integers(2**31))), samples=samples)
        # without land in range the estimator is unavailable; report no change
        out[k] = residual(g, est.mean.position) if est.available else 0.0
    return out


def _samples_near(m: Mission, origin: GeodeticPoint):
    return extract_shoreline(m.chart, origin, m.radar.rho_max * 1.05, m.spacing)


# --- running the detector ------------------------------------------------------------

def _first_after(times, exceed, t_onset) -> float | None:
    idx = np.nonzero(exceed & (times >= t_onset))[0]
    return float(times[idx[0]]) if len(idx) else None


def detect_stream(times, r, detector: DetectorConfig, fault: FaultSpec,
                  seed: int | None = None) -> RunResult:
    """Step a fresh combined detector through a residual stream."""
    det = ChangeDetector(detector)
    decisions = [det.step(ResidualSample(float(t), float(x))) for t, x in zip(times, r)]
    gg = np.array([d.g_gauss for d in decisions])
    gk = np.array([d.g_kde for d in decisions])
    ex_g = np.array([d.exceed_gauss for d in decisions])
    ex_k = np.array([d.exceed_kde for d in decisions])
    times = np.asarray(times, dtype=float)
    onset = fault.t_onset if fault.kind != "none" else -math.inf
    return RunResult(times, np.asarray(r, dtype=float), gg, gk,
                     np.array([d.alarm for d in decisions]), tuple(d.source for d in decisions),
                     fault, _first_after(times, ex_g, onset), _first_after(times, ex_k, onset),
                     seed)


def _run_seed(m: Mission, seed) -> np.random.SeedSequence:
    return np.random.SeedSequence(m.rng_seed if seed is None else seed)


def run_mission(m: Mission, spec: FaultSpec, seed=None) -> RunResult:
    """One run: residual stream plus the streaming combined detector.

    ``seed`` (an int or ``SeedSequence``) overrides the mission seed.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else _run_seed(m, seed)
    r = residual_stream(m, spec, np.random.default_rng(ss))
    return detect_stream(m.times, r, m.detector, spec,
                         seed=None if isinstance(seed, np.random.SeedSequence) else seed)


# --- threshold calibration ------------------------------------------------------------

def nominal_residuals(m: Mission, n_runs: int, seed) -> list[np.ndarray]:
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n_runs)
    none = FaultSpec("none")
    return [residual_stream(m, none, np.random.default_rng(c)) for c in children]


def calibrate_detector(streams, detector: DetectorConfig, p_fa: float,
                       per_run: bool = False) -> tuple[DetectorConfig, Threshold, Threshold]:
    """Thresholds from nominal residual streams.

    ``p_fa`` is the per-sample false-alarm probability, or with ``per_run``
    the probability that a whole nominal stream raises any alarm (the
    threshold is then a quantile of per-stream maxima).
    """
    def stats(series):
        gs = [series(r, detector) for r in streams]
        if per_run:
            return np.array([np.nanmax(g) for g in gs])
        return np.concatenate(gs)

    tg = calibrate_threshold(stats(gaussian_glrt_series), p_fa)
    tk = calibrate_threshold(stats(kde_glrt_series), p_fa)
    return detector.with_thresholds(tg.gamma, tk.gamma), tg, tk


def calibrate_mission(m: Mission, p_fa: float, n_runs: int = 4, seed=None) -> Mission:
    seed = m.rng_seed + 7919 if seed is None else seed
    cfg, _, _ = calibrate_detector(nominal_residuals(m, n_runs, seed), m.detector, p_fa)
    return m.with_detector(cfg)


# --- Monte Carlo --------------------------------------------------------------------

def draw_onsets(m: Mission, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = m.onset_window()
    return rng.uniform(lo, hi, n)


def _mc_plan(m: Mission, template: FaultSpec, n: int, seed):
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    onset_seq, run_seq = root.spawn(2)
    onsets = draw_onsets(m, n, np.random.default_rng(onset_seq))
    return [(replace(template, t_onset=float(t)), ss) for t, ss in zip(onsets, run_seq.spawn(n))]


def _mc_worker(args):
    m, spec, ss = args
    return run_mission(m, spec, ss)


def monte_carlo(m: Mission, template: FaultSpec, n: int, seed, jobs: int = 1) -> list[RunResult]:
    """``n`` runs with uniform onsets over the admissible window.

    Run ``i`` is seeded by the ``i``-th child of the seed sequence, so results
    do not depend on ``jobs``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = _mc_plan(m, template, n, seed)
    if jobs <= 1:
        return [run_mission(m, spec, ss) for spec, ss in plan]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_mc_worker, [(m, spec, ss) for spec, ss in plan]))


def penalized_t_d(result: RunResult, detector: str) -> float:
    """Detection time, or the mission remainder after onset if missed."""
    t = result.t_d(detector)
    return result.remaining if t is None else t


def performance_index(results, detector: str) -> float:
    """J = sum of squared detection times (misses penalized)."""
    return float(sum(penalized_t_d(r, detector) ** 2 for r in results))


def aggregate(results, quantiles=(0.1, 0.25, 0.5, 0.75, 0.9)) -> dict:
    """Summary statistics of a Monte Carlo ensemble (stable keys)."""
    out: dict = {"n": len(results)}
    for det in DETECTORS:
        t = np.array([np.nan if r.t_d(det) is None else r.t_d(det) for r in results])
        hit = t[np.isfinite(t)]
        out[det] = {
            "J": performance_index(results, det),
            "n_detected": int(hit.size),
            "n_missed": int(t.size - hit.size),
            "t_d_quantiles_s": {f"{q:g}": (float(np.quantile(hit, q)) if hit.size else None)
                                for q in quantiles},
        }
    comb = np.array([penalized_t_d(r, "combined") for r in results])
    gains = {}
    for det in ("gauss", "kde"):
        ind = np.array([penalized_t_d(r, det) for r in results])
        gain = np.where(ind > 0, (ind - comb) / np.where(ind > 0, ind, 1.0), 0.0)
        gains[det] = {
            "fraction_earlier": float(np.mean(comb < ind)) if len(results) else 0.0,
            "relative_gain_quantiles": {f"{q:g}": float(np.quantile(gain, q))
                                        for q in quantiles} if len(results) else {},
        }
    out["combined_vs_individual"] = gains
    return out


# --- tuning ------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    mu: int
    lam: int
    o: int
    h: float

    def key(self):
        return (self.mu, self.lam, self.o, self.h)


@dataclass(frozen=True)
class TuneResult:
    best_gauss: GridPoint
    best_kde: GridPoint
    j_gauss: dict = field(default_factory=dict)
    j_kde: dict = field(default_factory=dict)


def grid_points(mu, lam, o, h) -> list[GridPoint]:
    return [GridPoint(int(a), int(b), int(c), float(d))
            for a, b, c, d in itertools.product(mu, lam, o, h)]


def first_crossings(times, g, gamma, t_onset) -> float | None:
    return _first_after(np.asarray(times), np.asarray(g) > gamma, t_onset)


def _select(scores: dict) -> GridPoint:
    return min(scores, key=lambda p: (scores[p], p.mu, p.lam, p.o, p.h))


def tune_detector(m: Mission, grid, n_per_point: int, seed, p_fa: float = 1e-3,
                  n_calibration: int = 4, template: FaultSpec = FaultSpec("spoof", 0.0, 20.0),
                  streams=None) -> TuneResult:
    """Exhaustive grid search of J for each detector.

    Every grid point sees the same fault realizations and the same nominal
    calibration streams (common random numbers).  The Gaussian detector
    ignores ``h``; ties are broken by smaller ``mu`` then smaller ``lam``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty tuning grid")
    root = np.random.SeedSequence(seed)
    cal_seq, mc_seq = root.spawn(2)
    nominal = nominal_residuals(m, n_calibration, cal_seq)
    if streams is None:
        plan = _mc_plan(m, template, n_per_point, mc_seq)
        streams = [(spec, residual_stream(m, spec, np.random.default_rng(ss)))
                   for spec, ss in plan]
    end = float(m.times[-1])
    j_gauss: dict = {}
    j_kde: dict = {}
    gauss_cache: dict = {}
    for p in grid:
        cfg = DetectorConfig(lam=p.lam, mu=p.mu, o=p.o, h=p.h,
                             leave_one_out=m.detector.leave_one_out)
        wkey = (p.mu, p.lam, p.o)
        if wkey not in gauss_cache:
            gamma = calibrate_threshold(
                np.concatenate([gaussian_glrt_series(r, cfg) for r in nominal]), p_fa).gamma
            gauss_cache[wkey] = sum(
                _penalized(first_crossings(m.times, gaussian_glrt_series(r, cfg), gamma,
                                           spec.t_onset), spec, end) ** 2
                for spec, r in streams)
        j_gauss[p] = gauss_cache[wkey]
        gamma = calibrate_threshold(
            np.concatenate([kde_glrt_series(r, cfg) for r in nominal]), p_fa).gamma
        j_kde[p] = float(sum(
            _penalized(first_crossings(m.times, kde_glrt_series(r, cfg), gamma,
                                       spec.t_onset), spec, end) ** 2
            for spec, r in streams))
    return TuneResult(_select(j_gauss), _select(j_kde), j_gauss, j_kde)


def _penalized(t_alarm, spec: FaultSpec, end: float) -> float:
    return end - spec.t_onset if t_alarm is None else t_alarm - spec.t_onset


# --- helpers for building missions -------------------------------------------------

def residual_slope(times, r, t_from: float, t_to: float) -> float:
    """Least-squares slope of the residual (m/s) between two times."""
    times = np.asarray(times, dtype=float)
    sel = (times >= t_from) & (times <= t_to)
    if sel.sum() < 2:
        raise ValueError("need at least two samples to fit a slope")
    return float(np.polyfit(times[sel], np.asarray(r)[sel], 1)[0])


def track_to_ned(points, origin: GeodeticPoint) -> np.ndarray:
    lat = np.array([p.lat for p in points])
    lon = np.array([p.lon for p in points])
    n, e = to_ned_arrays(lat, lon, origin)
    return np.column_stack([n, e])
