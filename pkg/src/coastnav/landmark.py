"""Second-stage estimator: resection from charted static landmarks.

Radar-tracked static targets are associated to chart landmarks by gated
nearest neighbour, heading is solved from the triangle formed by the ship and
two landmarks, and per-landmark position fixes are fused in information form.
Uncertainty is propagated analytically: a Gaussian ratio approximation for the
range ratio, a second-order expansion for the heading, and first-order
linearisation for positions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .chart import Chart, Landmark
from .geodesy import (GeodeticPoint, Pose, radii_of_curvature, to_geo_arrays,
                      to_ned_arrays, wrap_angle)
from .lfm import PoseEstimate
from .radarsim import StaticTarget


class DegenerateGeometryError(ValueError):
    """Raised when two landmarks/targets do not define a usable triangle."""


@dataclass(frozen=True)
class Association:
    pairs: tuple[tuple[int, str, float], ...]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class PairGeometry:
    r_ji: float
    beta_ji: float
    d_ij: float
    a_ij: float

    def __post_init__(self) -> None:
        if self.r_ji <= 0 or self.d_ij <= 0:
            raise DegenerateGeometryError("range ratio and landmark separation must be positive")


@dataclass(frozen=True)
class HeadingEstimate:
    mean: float
    var: float
    delta_mean: float = float("nan")
    delta_var: float = float("nan")


# --- association -------------------------------------------------------------

def target_ned(target: StaticTarget, heading: float) -> np.ndarray:
    ang = target.bearing + heading
    return np.array([target.range * math.cos(ang), target.range * math.sin(ang)])


def associate(targets, landmarks, prior: Pose, gate: float = 100.0) -> Association:
    """Gated global-nearest-neighbour association, one-to-one.

    Candidate pairs closer than ``gate`` are accepted greedily in order of
    increasing distance.
    """
    landmarks = list(landmarks)
    if not targets or not landmarks:
        return Association(())
    z = np.array([target_ned(t, prior.heading) for t in targets])
    ln, le = to_ned_arrays([lm.position.lat for lm in landmarks],
                           [lm.position.lon for lm in landmarks], prior.position)
    lm_xy = np.column_stack([ln, le])
    xi = np.hypot(z[:, None, 0] - lm_xy[None, :, 0], z[:, None, 1] - lm_xy[None, :, 1])
    order = np.argsort(xi, axis=None, kind="stable")
    used_t, used_l, pairs = set(), set(), []
    for flat in order:
        i, j = np.unravel_index(flat, xi.shape)
        if xi[i, j] >= gate:
            break
        if i in used_t or j in used_l:
            continue
        used_t.add(i)
        used_l.add(j)
        pairs.append((int(i), landmarks[j].id, float(xi[i, j])))
    pairs.sort()
    return Association(tuple(pairs))


# --- deterministic resection ---------------------------------------------------

def pair_geometry(zi: StaticTarget, zj: StaticTarget, li: Landmark, lj: Landmark,
                  origin: GeodeticPoint) -> PairGeometry:
    n, e = to_ned_arrays([li.position.lat, lj.position.lat],
                         [li.position.lon, lj.position.lon], origin)
    dn, de = float(n[0] - n[1]), float(e[0] - e[1])
    d = math.hypot(dn, de)
    if d == 0.0 or li.id == lj.id:
        raise DegenerateGeometryError(f"landmarks {li.id} and {lj.id} coincide")
    if zi.range <= 0:
        raise DegenerateGeometryError("target range must be positive")
    return PairGeometry(zj.range / zi.range, wrap_angle(zj.bearing - zi.bearing),
                        d, math.atan2(de, dn))


def delta_psi(r, beta):
    """Angle of the triangle correction; vectorised over ``r`` and ``beta``."""
    return np.arctan2(r * np.sin(beta), 1.0 - r * np.cos(beta))


def heading_from_pair(g: PairGeometry, beta_i: float, eps: float = 1e-9) -> float:
    num = g.r_ji * math.sin(g.beta_ji)
    den = 1.0 - g.r_ji * math.cos(g.beta_ji)
    if math.hypot(num, den) < eps:
        raise DegenerateGeometryError("targets appear coincident (r_ji ~ 1, beta_ji ~ 0)")
    return wrap_angle(math.atan2(num, den) + g.a_ij - beta_i)


def position_from_target(z: StaticTarget, landmark: Landmark, psi_hat: float,
                         iters: int = 6) -> GeodeticPoint:
    """Ship position from one target, its landmark, and the heading.

    The correction vector ``-rho * (cos, sin)(beta + psi)`` is mapped back
    through the inverse tangent-plane transform anchored at the landmark.  The
    first pass uses the landmark's own scale factors; later passes re-evaluate
    them at the recovered latitude so that the result is the ship whose own
    tangent plane sees the landmark at ``(rho, beta)``.
    """
    ang = z.bearing + psi_hat
    dn, de = -z.range * math.cos(ang), -z.range * math.sin(ang)
    lat_l, lon_l = landmark.position.lat, landmark.position.lon
    lat = lat_l
    for _ in range(iters):
        n_r, m_r = radii_of_curvature(lat)
        lat_new = lat_l + dn / m_r
        if lat_new == lat:
            break
        lat = lat_new
    n_r, _ = radii_of_curvature(lat)
    lon = lon_l + de / (n_r * math.cos(lat))
    return GeodeticPoint(lat, float(wrap_angle(lon)))


# --- uncertainty propagation ---------------------------------------------------

def delta_psi_derivatives(r: float, beta: float):
    """Gradient and Hessian of ``delta_psi`` with respect to ``(r, beta)``."""
    s, c = math.sin(beta), math.cos(beta)
    q = 1.0 - 2.0 * r * c + r * r
    grad = np.array([s / q, (r * c - r * r) / q])
    q_r, q_b = 2.0 * (r - c), 2.0 * r * s
    f_rr = -s * q_r / q**2
    f_rb = (c * q - s * q_b) / q**2
    f_bb = (-r * s * q - (r * c - r * r) * q_b) / q**2
    return grad, np.array([[f_rr, f_rb], [f_rb, f_bb]])


def ratio_moments(mu_i: float, mu_j: float, var_i: float, var_j: float) -> tuple[float, float]:
    """Gaussian approximation of ``rho_j / rho_i`` for independent Gaussian ranges."""
    if mu_i <= 0 or mu_j <= 0:
        raise ValueError("ratio approximation needs positive mean ranges")
    if math.sqrt(var_i) / mu_i >= 1.0:
        raise ValueError("coefficient of variation of range i must be < 1")
    if math.sqrt(var_j) / mu_j >= 1.0:
        raise ValueError("coefficient of variation of range j must be < 1")
    m = mu_j / mu_i
    return m, m * m * (var_i / mu_i**2 + var_j / mu_j**2)


def heading_variance(g: PairGeometry, range_vars, bearing_vars, means) -> HeadingEstimate:
    """Second-order moments of the triangulated heading.

    ``means`` is ``(mu_rho_i, mu_rho_j, mu_beta_i, mu_beta_j)``.  Cross
    covariances between the two targets are taken as zero.
    """
    mu_ri, mu_rj, mu_bi, mu_bj = means
    var_ri, var_rj = range_vars
    var_bi, var_bj = bearing_vars
    mu_r, var_r = ratio_moments(mu_ri, mu_rj, var_ri, var_rj)
    mu_b = wrap_angle(mu_bj - mu_bi)
    sigma_x = np.diag([var_r, var_bi + var_bj])
    grad, hess = delta_psi_derivatives(mu_r, mu_b)
    f0 = float(delta_psi(mu_r, mu_b))
    mean_d = f0 + 0.5 * float(np.trace(hess @ sigma_x))
    var_d = float(grad @ sigma_x @ grad) + 0.5 * float(np.trace(sigma_x @ hess @ sigma_x @ hess))
    return HeadingEstimate(wrap_angle(mean_d + g.a_ij - mu_bi), var_d + var_bi, mean_d, var_d)


def position_jacobian(rho: float, beta: float, psi: float) -> np.ndarray:
    """d(north, east)/d(rho, beta, psi) of the correction vector."""
    th = beta + psi
    c, s = math.cos(th), math.sin(th)
    return np.array([[-c, rho * s, rho * s],
                     [-s, -rho * c, -rho * c]])


def position_covariance(z: StaticTarget, psi: HeadingEstimate) -> np.ndarray:
    if z.range_var < 0 or z.bearing_var < 0 or psi.var < 0:
        raise ValueError("variances must be non-negative")
    jac = position_jacobian(z.range, z.bearing, psi.mean)
    sigma_k = np.diag([z.range_var, z.bearing_var, psi.var])
    return jac @ sigma_k @ jac.T


# --- fusion ------------------------------------------------------------------

def fuse_ned(means, covs, eps: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Information-form product of Gaussians in a common plane."""
    if len(means) == 0:
        raise ValueError("nothing to fuse")
    info = np.zeros((2, 2))
    vec = np.zeros(2)
    for mu, cov in zip(means, covs):
        cov = np.asarray(cov, dtype=float)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov = cov + eps * np.eye(2)
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError("covariance singular after regularisation") from exc
        inv = np.linalg.inv(cov)
        info += inv
        vec += inv @ np.asarray(mu, dtype=float)
    cov_f = np.linalg.inv(info)
    cov_f = 0.5 * (cov_f + cov_f.T)
    return cov_f @ vec, cov_f


def fuse(estimates, eps: float = 1e-6) -> tuple[GeodeticPoint, np.ndarray]:
    """Fuse ``(GeodeticPoint, 2x2 NED covariance)`` estimates."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("nothing to fuse")
    origin = estimates[0][0]
    means = []
    for p, _ in estimates:
        n, e = to_ned_arrays(p.lat, p.lon, origin)
        means.append(np.array([float(n), float(e)]))
    mu, cov = fuse_ned(means, [c for _, c in estimates], eps)
    lat, lon = to_geo_arrays(mu[0], mu[1], origin)
    return GeodeticPoint(float(lat), float(wrap_angle(lon))), cov


# --- full second stage ---------------------------------------------------------

def _pair_heading(targets, lms, i, j, origin):
    g = pair_geometry(targets[i], targets[j], lms[i], lms[j], origin)
    zi, zj = targets[i], targets[j]
    psi_hat = heading_from_pair(g, zi.bearing)
    h = heading_variance(g, (zi.range_var, zj.range_var), (zi.bearing_var, zj.bearing_var),
                         (zi.range, zj.range, zi.bearing, zj.bearing))
    # the point estimate is the closed-form solution; the variance is the
    # second-order one
    return HeadingEstimate(psi_hat, h.var, h.delta_mean, h.delta_var)


def estimate_second_stage(targets, chart: Chart, first_stage: PoseEstimate,
                          gate: float = 100.0, relinearize: int = 5,
                          tol: float = 1e-9) -> PoseEstimate:
    """Refine a first-stage pose from two or more associated landmarks.

    The pair with the smallest heading variance sets the heading; every
    associated target then yields a position fix and the fixes are fused.  The
    triangle is solved in the tangent plane at the current ship estimate, and
    re-solved at the new estimate until it stops moving.
    """
    if not first_stage.available or first_stage.mean is None:
        return PoseEstimate.unavailable("second", "first stage unavailable")
    targets = list(targets)
    assoc = associate(targets, chart.landmarks, first_stage.mean, gate)
    if len(assoc) < 2:
        return PoseEstimate.unavailable("second", f"{len(assoc)} associated landmarks")
    tz = [targets[i] for i, _, _ in assoc.pairs]
    lms = [chart.landmark(lid) for _, lid, _ in assoc.pairs]

    origin = first_stage.mean.position
    best = None
    for _ in range(max(1, relinearize)):
        best = None
        for i, j in itertools.combinations(range(len(tz)), 2):
            try:
                h = _pair_heading(tz, lms, i, j, origin)
            except (DegenerateGeometryError, ValueError):
                continue
            if best is None or h.var < best[0].var:
                best = (h, i, j)
        if best is None:
            return PoseEstimate.unavailable("second", "degenerate landmark geometry")
        psi = best[0]
        fixes = [(position_from_target(z, lm, psi.mean), position_covariance(z, psi))
                 for z, lm in zip(tz, lms)]
        pos, cov2 = fuse(fixes)
        n, e = to_ned_arrays(pos.lat, pos.lon, origin)
        origin = pos
        if math.hypot(float(n), float(e)) < tol:
            break

    cov = np.zeros((3, 3))
    cov[:2, :2] = cov2
    cov[2, 2] = psi.var
    return PoseEstimate(
        mean=Pose(pos, psi.mean), cov=cov, stage="second", available=True,
        extras={"association": assoc, "pair": (best[1], best[2]), "heading": psi,
                "fixes": fixes},
    )
