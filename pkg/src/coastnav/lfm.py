"""First-stage pose estimator: likelihood-field scan matching.

A radar return is scored by the distance from its world-frame endpoint to the
nearest charted shoreline sample, mixed with a uniform clutter floor.  The
pose offset around a prior (normally the GNSS fix) maximising the scan
log-likelihood is found with particle swarm optimisation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .chart import Chart, EmptySamplesError, ShorelineSamples, extract_shoreline
from .geodesy import (GeodeticPoint, Pose, offset_pose, radii_of_curvature,
                      to_geo_arrays, to_ned_arrays, wrap_angle)
from .radarsim import RadarScan

SQRT_2PI = math.sqrt(2.0 * math.pi)
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class LfmParams:
    p_hit: float = 0.9
    p_random: float = 0.1
    sigma_lfm: float = 25.0
    rho_max: float = 5000.0

    def __post_init__(self) -> None:
        if min(self.p_hit, self.p_random) < 0 or abs(self.p_hit + self.p_random - 1.0) > 1e-9:
            raise ValueError("p_hit and p_random must be non-negative and sum to 1")
        if self.sigma_lfm <= 0 or self.rho_max <= 0:
            raise ValueError("sigma_lfm and rho_max must be positive")

    @property
    def clutter_floor(self) -> float:
        return self.p_random / self.rho_max


@dataclass(frozen=True)
class PoseOffset:
    dn: float
    de: float
    dpsi: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.dn, self.de, self.dpsi)):
            raise ValueError("pose offset must be finite")
        if abs(self.dpsi) > math.pi:
            raise ValueError("|dpsi| must not exceed pi")

    def as_array(self) -> np.ndarray:
        return np.array([self.dn, self.de, self.dpsi])


@dataclass(frozen=True)
class PsoConfig:
    n_particles: int = 30
    n_iters: int = 40
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    lower: tuple[float, ...] = (-500.0, -500.0, -0.2)
    upper: tuple[float, ...] = (500.0, 500.0, 0.2)
    rng_seed: int = 0
    vmax_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.n_particles < 1 or self.n_iters < 0:
            raise ValueError("need n_particles >= 1 and n_iters >= 0")
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("PSO bounds must be non-degenerate boxes")

    def with_seed(self, seed: int) -> PsoConfig:
        return PsoConfig(self.n_particles, self.n_iters, self.inertia, self.cognitive,
                         self.social, self.lower, self.upper, seed, self.vmax_fraction)


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    """Gaussian pose posterior; ``cov`` is over (north m, east m, heading rad)."""

    mean: Pose | None
    cov: np.ndarray
    stage: str
    available: bool
    offset: PoseOffset | None = None
    log_likelihood: float = float("nan")
    ridge_direction: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (3, 3) or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be a symmetric 3x3 matrix")
        if self.stage not in ("first", "second"):
            raise ValueError(f"unknown stage {self.stage!r}")
        object.__setattr__(self, "cov", cov)

    @classmethod
    def unavailable(cls, stage: str, reason: str) -> PoseEstimate:
        return cls(None, np.zeros((3, 3)), stage, False, extras={"reason": reason})

    @property
    def degenerate(self) -> bool:
        return self.ridge_direction is not None


# --- observation model -------------------------------------------------------

def observation_to_geo(rho: float, beta: float, pose: Pose) -> GeodeticPoint:
    """World position of a radar return seen from ``pose``."""
    ang = beta + pose.heading
    lat, lon = to_geo_arrays(rho * math.cos(ang), rho * math.sin(ang), pose.position)
    return GeodeticPoint(float(lat), float(wrap_angle(lon)))


def observation_endpoints(ranges, bearings, origin: GeodeticPoint, dn, de, psi) -> np.ndarray:
    """Endpoints of a scan, in the plane at ``origin``, for a batch of poses.

    Each pose sits at tangent-plane offset ``(dn, de)`` from ``origin`` with
    heading ``psi``.  Returns shape ``(n_poses, n_obs, 2)``.
    """
    dn = np.atleast_1d(np.asarray(dn, float))[:, None]
    de = np.atleast_1d(np.asarray(de, float))[:, None]
    psi = np.atleast_1d(np.asarray(psi, float))[:, None]
    lat_p, lon_p = to_geo_arrays(dn, de, origin)
    n_p, m_p = radii_of_curvature(lat_p)
    ang = np.asarray(bearings, float)[None, :] + psi
    rho = np.asarray(ranges, float)[None, :]
    lat = lat_p + rho * np.cos(ang) / m_p
    lon = lon_p + rho * np.sin(ang) / (n_p * np.cos(lat_p))
    north, east = to_ned_arrays(lat, lon, origin)
    return np.stack([north, east], axis=-1)


def likelihood_from_distance(d, params: LfmParams):
    d = np.asarray(d, dtype=float)
    s = params.sigma_lfm
    return params.p_hit * np.exp(-0.5 * (d / s) ** 2) / (SQRT_2PI * s) + params.clutter_floor


def _log_terms(d, params: LfmParams):
    floor = params.clutter_floor if params.clutter_floor > 0 else LOG_FLOOR
    return np.log(np.maximum(likelihood_from_distance(d, params), floor))


def likelihood(z: tuple[float, float], pose: Pose, samples: ShorelineSamples,
               params: LfmParams) -> float:
    """Likelihood-field density of one return ``z = (range, bearing)``."""
    pts = observation_endpoints([z[0]], [z[1]], samples.origin,
                                *_pose_offset_in(samples.origin, pose))
    return float(likelihood_from_distance(samples.min_distances(pts[0]), params)[0])


def _pose_offset_in(origin: GeodeticPoint, pose: Pose):
    n, e = to_ned_arrays(pose.position.lat, pose.position.lon, origin)
    return float(n), float(e), pose.heading


def scan_log_likelihood(scan: RadarScan, pose: Pose, samples: ShorelineSamples,
                        params: LfmParams) -> float:
    if len(scan) == 0:
        raise ValueError("empty radar scan")
    pts = observation_endpoints(scan.ranges, scan.bearings, samples.origin,
                                *_pose_offset_in(samples.origin, pose))
    return float(_log_terms(samples.min_distances(pts[0]), params).sum())


def batch_log_likelihood(scan: RadarScan, samples: ShorelineSamples, params: LfmParams,
                         prior: Pose, offsets: np.ndarray) -> np.ndarray:
    """Scan log-likelihood at ``prior`` shifted by each row ``(dn, de, dpsi)``."""
    offsets = np.atleast_2d(offsets)
    pdn, pde, ppsi = _pose_offset_in(samples.origin, prior)
    pts = observation_endpoints(scan.ranges, scan.bearings, samples.origin,
                                pdn + offsets[:, 0], pde + offsets[:, 1],
                                ppsi + offsets[:, 2])
    d = samples.min_distances(pts)
    return _log_terms(d, params).sum(axis=1)


# --- particle swarm ----------------------------------------------------------

class PsoResult(NamedTuple):
    x: np.ndarray
    value: float
    history: np.ndarray


def pso_maximize(objective: Callable, config: PsoConfig, *, vectorized: bool = False,
                 initial=None) -> PsoResult:
    """Global-best particle swarm maximisation over the box in ``config``.

    ``objective`` takes one parameter vector, or a ``(n, d)`` batch when
    ``vectorized`` is set.  ``initial`` (optional) replaces the first random
    particle.  Deterministic for a fixed ``config.rng_seed``.
    """
    rng = np.random.default_rng(config.rng_seed)
    lo = np.asarray(config.lower, float)
    hi = np.asarray(config.upper, float)
    width = hi - lo
    vmax = config.vmax_fraction * width
    n, dim = config.n_particles, len(lo)

    def evaluate(x):
        if vectorized:
            return np.asarray(objective(x), dtype=float).reshape(len(x))
        return np.array([float(objective(row)) for row in x])

    x = lo + rng.random((n, dim)) * width
    if initial is not None:
        x[0] = np.clip(np.asarray(initial, float), lo, hi)
    v = rng.uniform(-1.0, 1.0, (n, dim)) * vmax
    f = evaluate(x)
    pbest, pval = x.copy(), f.copy()
    g = int(np.argmax(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    history = [gval]

    for _ in range(config.n_iters):
        r1 = rng.random((n, dim))
        r2 = rng.random((n, dim))
        v = (config.inertia * v + config.cognitive * r1 * (pbest - x)
             + config.social * r2 * (gbest - x))
        v = np.clip(v, -vmax, vmax)
        x = x + v
        hit_wall = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        v[hit_wall] = 0.0
        f = evaluate(x)
        better = f > pval
        pbest[better] = x[better]
        pval[better] = f[better]
        g = int(np.argmax(pval))
        if pval[g] > gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        history.append(gval)
    return PsoResult(gbest, gval, np.asarray(history))


# --- first stage -------------------------------------------------------------

DEFAULT_FIRST_STAGE_STD = (61.0, 61.0, math.radians(2.0))


def _position_hessian(fun, x0: np.ndarray, step: float) -> np.ndarray:
    e = np.eye(3)[:2] * step
    probes = np.array([x0, x0 + e[0], x0 - e[0], x0 + e[1], x0 - e[1],
                       x0 + e[0] + e[1], x0 + e[0] - e[1],
                       x0 - e[0] + e[1], x0 - e[0] - e[1]])
    f = fun(probes)
    h_nn = (f[1] - 2 * f[0] + f[2]) / step**2
    h_ee = (f[3] - 2 * f[0] + f[4]) / step**2
    h_ne = (f[5] - f[6] - f[7] + f[8]) / (4 * step**2)
    return np.array([[h_nn, h_ne], [h_ne, h_ee]])


def estimate_first_stage(scan: RadarScan, prior: Pose, chart: Chart, params: LfmParams,
                         pso: PsoConfig, *, spacing: float = 5.0,
                         samples: ShorelineSamples | None = None,
                         std: tuple[float, float, float] = DEFAULT_FIRST_STAGE_STD,
                         ridge_ratio: float = 1e-3) -> PoseEstimate:
    """Maximum-likelihood pose offset around ``prior``.

    The covariance is a fixed diagonal (``std``) calibrated from nominal
    error statistics.  When the position Hessian of the log-likelihood is
    nearly singular (e.g. a straight featureless coast) the weak direction is
    returned in ``ridge_direction``.
    """
    if len(scan) == 0:
        return PoseEstimate.unavailable("first", "empty scan")
    if samples is None:
        reach = params.rho_max + max(abs(v) for v in (*pso.lower[:2], *pso.upper[:2]))
        samples = extract_shoreline(chart, prior.position, reach + 4 * params.sigma_lfm,
                                    spacing)
    if samples.empty:
        return PoseEstimate.unavailable("first", "no land within radar range")

    def objective(offsets):
        return batch_log_likelihood(scan, samples, params, prior, offsets)

    res = pso_maximize(objective, pso, vectorized=True, initial=np.zeros(3))
    dn, de, dpsi = (float(v) for v in res.x)

    hess = _position_hessian(objective, res.x, params.sigma_lfm / 5.0)
    curv, vecs = np.linalg.eigh(-hess)
    ridge = None
    if curv[-1] <= 0 or curv[0] < ridge_ratio * curv[-1]:
        ridge = vecs[:, 0] * np.sign(vecs[np.argmax(np.abs(vecs[:, 0])), 0])

    return PoseEstimate(
        mean=offset_pose(prior, dn, de, dpsi),
        cov=np.diag(np.square(std)),
        stage="first",
        available=True,
        offset=PoseOffset(dn, de, dpsi),
        log_likelihood=res.value,
        ridge_direction=ridge,
        extras={"curvature": curv, "pso_history": res.history},
    )


# --- EM parameter fitting ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmFit:
    params: LfmParams
    converged: bool
    n_iter: int
    log_likelihoods: np.ndarray
    weights: np.ndarray


def _mixture_loglik(d: np.ndarray, p: LfmParams) -> float:
    return float(_log_terms(d, p).sum())


def fit_lfm_em_distances(d, init: LfmParams, tol: float = 1e-6, max_iters: int = 500,
                         sigma_floor: float = 1e-3) -> EmFit:
    """EM over shoreline distances of radar returns.

    E-step: responsibility of the hit component for each return.  M-step:
    ``p_hit`` is the mean responsibility and ``sigma_lfm`` the
    responsibility-weighted RMS distance.  Stops when the log-likelihood gain
    drops below ``tol``.
    """
    d = np.asarray(d, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("EM needs at least one observation")
    p = init
    lls = [_mixture_loglik(d, p)]
    weights = [(p.p_hit, p.p_random)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        s = p.sigma_lfm
        hit = p.p_hit * np.exp(-0.5 * (d / s) ** 2) / (SQRT_2PI * s)
        rand = np.full_like(d, p.clutter_floor)
        total = hit + rand
        resp = np.divide(hit, total, out=np.zeros_like(d), where=total > 0)
        p_hit = float(resp.mean())
        w_sum = resp.sum()
        sigma = math.sqrt(float((resp * d * d).sum() / w_sum)) if w_sum > 0 else s
        p = LfmParams(p_hit, 1.0 - p_hit, max(sigma, sigma_floor), p.rho_max)
        lls.append(_mixture_loglik(d, p))
        weights.append((p.p_hit, p.p_random))
        if lls[-1] - lls[-2] < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"LFM EM did not converge in {max_iters} iterations", RuntimeWarning)
    return EmFit(p, converged, it, np.asarray(lls), np.asarray(weights))


def observation_distances(dataset, chart: Chart, rho_max: float,
                          spacing: float = 5.0) -> np.ndarray:
    """Shoreline distance of every return in ``(pose, scan)`` pairs."""
    out = []
    for pose, scan in dataset:
        if len(scan) == 0:
            continue
        samples = extract_shoreline(chart, pose.position, rho_max * 1.2, spacing)
        if samples.empty:
            raise EmptySamplesError("dataset pose has no shoreline within range")
        pts = observation_endpoints(scan.ranges, scan.bearings, samples.origin,
                                    *_pose_offset_in(samples.origin, pose))
        out.append(samples.min_distances(pts[0]))
    return np.concatenate(out) if out else np.empty(0)


def fit_lfm_em(dataset, chart: Chart, init: LfmParams, tol: float = 1e-6,
               max_iters: int = 500, spacing: float = 5.0) -> EmFit:
    """Fit likelihood-field parameters on ground-truth ``(pose, scan)`` pairs."""
    if not dataset:
        raise ValueError("EM needs a non-empty dataset")
    d = observation_distances(dataset, chart, init.rho_max, spacing)
    return fit_lfm_em_distances(d, init, tol, max_iters)
