from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from coastnav.chart import Landmark, chart_from_ned
from coastnav.geodesy import NedPoint, Pose, offset_pose, to_geo, to_ned, wrap_angle
from coastnav.landmark import (DegenerateGeometryError, HeadingEstimate, PairGeometry, associate, delta_psi,
                               delta_psi_derivatives, estimate_second_stage, fuse, fuse_ned,
                               heading_from_pair, heading_variance, pair_geometry,
                               position_covariance, position_from_target, position_jacobian,
                               ratio_moments)
from coastnav.lfm import PoseEstimate
from coastnav.radarsim import RadarNoiseParams, StaticTarget, detect_static_targets

EXACT = RadarNoiseParams(p_detect=1.0, sigma_range=0.0, sigma_bearing=0.0)


def _scene(origin, marks, heading=0.3):
    chart = chart_from_ned(origin, [], marks)
    truth = Pose(origin, heading)
    return chart, truth, detect_static_targets(truth, chart.landmarks, EXACT, 0)


def _first(pose, dn=30.0, de=-20.0, dpsi=0.01):
    return PoseEstimate(offset_pose(pose, dn, de, dpsi), np.eye(3), "first", True)


@settings(max_examples=200)
@given(st.floats(0.05, 20.0), st.floats(-math.pi, math.pi))
def test_reciprocal_ratio_form(r, beta):
    assume(abs(1 - r * math.cos(beta)) + abs(r * math.sin(beta)) > 1e-6)
    # the same angle written with r_ij = 1 / r_ji
    other = math.atan2(math.sin(beta), 1.0 / r - math.cos(beta))
    assert math.isclose(float(delta_psi(r, beta)), other, abs_tol=1e-9)


def test_heading_from_triangle(origin):
    chart, truth, targets = _scene(origin, {"A": (800.0, 200.0), "B": (-300.0, 900.0)})
    g = pair_geometry(targets[0], targets[1], *chart.landmarks, origin)
    assert heading_from_pair(g, targets[0].bearing) == pytest.approx(0.3, abs=1e-12)


def test_coincident_targets_degenerate():
    g = PairGeometry(1.0, 0.0, 100.0, 0.0)
    with pytest.raises(DegenerateGeometryError):
        heading_from_pair(g, 0.0)
    with pytest.raises(DegenerateGeometryError):
        PairGeometry(0.0, 0.0, 100.0, 0.0)


def test_same_landmark_twice_degenerate(origin):
    chart, _, targets = _scene(origin, {"A": (800.0, 200.0)})
    lm = chart.landmarks[0]
    with pytest.raises(DegenerateGeometryError):
        pair_geometry(targets[0], targets[0], lm, lm, origin)


def test_position_from_target_exact(origin):
    chart, truth, targets = _scene(origin, {"A": (2500.0, -1800.0)})
    p = position_from_target(targets[0], chart.landmarks[0], truth.heading)
    d = to_ned(p, origin)
    assert math.hypot(d.north, d.east) < 1e-6


@settings(max_examples=100)
@given(st.floats(0.2, 5.0), st.floats(0.2, 3.0))
def test_derivatives_match_finite_differences(r, beta):
    grad, hess = delta_psi_derivatives(r, beta)
    h = 1e-5
    f = lambda a, b: float(delta_psi(a, b))
    fd_grad = [(f(r + h, beta) - f(r - h, beta)) / (2 * h),
               (f(r, beta + h) - f(r, beta - h)) / (2 * h)]
    np.testing.assert_allclose(grad, fd_grad, rtol=1e-6, atol=1e-8)
    fd_hess = np.array([
        [(grad_at(r + h, beta)[0] - grad_at(r - h, beta)[0]) / (2 * h),
         (grad_at(r, beta + h)[0] - grad_at(r, beta - h)[0]) / (2 * h)],
        [(grad_at(r + h, beta)[1] - grad_at(r - h, beta)[1]) / (2 * h),
         (grad_at(r, beta + h)[1] - grad_at(r, beta - h)[1]) / (2 * h)],
    ])
    np.testing.assert_allclose(hess, fd_hess, rtol=1e-5, atol=1e-7)
    assert hess[0, 1] == hess[1, 0]


def grad_at(r, beta):
    return delta_psi_derivatives(r, beta)[0]


def test_ratio_moments_monte_carlo():
    rng = np.random.default_rng(0)
    ri = rng.normal(1000.0, 20.0, 400_000)
    rj = rng.normal(1500.0, 30.0, 400_000)
    m, v = ratio_moments(1000.0, 1500.0, 400.0, 900.0)
    assert m == pytest.approx(np.mean(rj / ri), rel=1e-3)
    assert v == pytest.approx(np.var(rj / ri), rel=0.03)
    with pytest.raises(ValueError):
        ratio_moments(10.0, 10.0, 400.0, 1.0)


def test_heading_variance_monte_carlo(origin):
    chart, truth, targets = _scene(origin, {"A": (1200.0, 300.0), "B": (-200.0, 1500.0)})
    zi, zj = targets
    sr, sb = 15.0, math.radians(0.5)
    g = pair_geometry(zi, zj, *chart.landmarks, origin)
    h = heading_variance(g, (sr**2, sr**2), (sb**2, sb**2),
                         (zi.range, zj.range, zi.bearing, zj.bearing))
    rng = np.random.default_rng(3)
    n = 400_000
    ri = zi.range + sr * rng.standard_normal(n)
    rj = zj.range + sr * rng.standard_normal(n)
    bi = zi.bearing + sb * rng.standard_normal(n)
    bj = zj.bearing + sb * rng.standard_normal(n)
    dpsi = delta_psi(rj / ri, wrap_angle(bj - bi))
    assert h.delta_var == pytest.approx(np.var(dpsi), rel=0.05)
    # the second-order mean is within a few percent of one standard deviation
    assert h.delta_mean == pytest.approx(np.mean(dpsi), abs=0.02 * math.sqrt(h.delta_var))
    assert h.var == pytest.approx(h.delta_var + sb**2)


def test_position_jacobian_finite_difference():
    rho, beta, psi = 1500.0, 0.7, -0.2
    jac = position_jacobian(rho, beta, psi)

    def corr(x):
        th = x[1] + x[2]
        return -x[0] * np.array([math.cos(th), math.sin(th)])

    x0 = np.array([rho, beta, psi])
    for k, h in enumerate((1e-3, 1e-7, 1e-7)):
        e = np.zeros(3)
        e[k] = h
        fd = (corr(x0 + e) - corr(x0 - e)) / (2 * h)
        np.testing.assert_allclose(jac[:, k], fd, rtol=1e-6)


def test_position_covariance_psd():
    z = StaticTarget(1000.0, 0.4, 100.0, 1e-4)
    cov = position_covariance(z, HeadingEstimate(0.1, 4e-4))
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)


def test_fuse_reduces_trace():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=(2, 2))
        b = rng.normal(size=(2, 2))
        ca, cb = a @ a.T + 0.1 * np.eye(2), b @ b.T + 0.1 * np.eye(2)
        ma, mb = rng.normal(size=2), rng.normal(size=2)
        mu, cov = fuse_ned([ma, mb], [ca, cb])
        assert np.trace(cov) <= min(np.trace(ca), np.trace(cb)) + 1e-12
        expected = np.linalg.inv(np.linalg.inv(ca) + np.linalg.inv(cb))
        np.testing.assert_allclose(cov, expected, rtol=1e-10)
        np.testing.assert_allclose(
            mu, expected @ (np.linalg.solve(ca, ma) + np.linalg.solve(cb, mb)), rtol=1e-10)


def test_fuse_identical_inputs_averages():
    mu, cov = fuse_ned([np.array([0.0, 0.0]), np.array([2.0, 4.0])], [np.eye(2), np.eye(2)])
    np.testing.assert_allclose(mu, [1.0, 2.0])
    np.testing.assert_allclose(cov, 0.5 * np.eye(2))


def test_fuse_regularises_singular():
    mu, cov = fuse_ned([np.zeros(2), np.ones(2)], [np.zeros((2, 2)), np.eye(2)])
    assert np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))
    with pytest.raises(ValueError):
        fuse_ned([], [])


def test_fuse_geodetic(origin):
    p1 = to_geo(NedPoint(10.0, 0.0), origin)
    p2 = to_geo(NedPoint(-10.0, 0.0), origin)
    p, cov = fuse([(p1, np.eye(2)), (p2, np.eye(2))])
    d = to_ned(p, origin)
    assert (d.north, d.east) == pytest.approx((0.0, 0.0), abs=1e-6)


def test_association_gate_and_uniqueness(origin):
    chart, truth, targets = _scene(origin, {"A": (800.0, 0.0), "B": (810.0, 0.0),
                                            "C": (-900.0, 400.0)})
    assoc = associate(targets, chart.landmarks, truth, gate=100.0)
    ids = [lid for _, lid, _ in assoc.pairs]
    assert sorted(ids) == ["A", "B", "C"]
    assert len(set(i for i, _, _ in assoc.pairs)) == 3
    # a prior 150 m off pushes every candidate past the gate
    far = offset_pose(truth, 150.0, 0.0, 0.0)
    assert len(associate(targets, chart.landmarks, far, gate=100.0)) == 0


def test_second_stage_noise_free(origin):
    marks = {"A": (1500.0, 800.0), "B": (-700.0, 2100.0), "C": (-1900.0, -900.0)}
    chart, truth, targets = _scene(origin, marks)
    est = estimate_second_stage(targets, chart, _first(truth))
    assert est.available and est.stage == "second"
    d = to_ned(est.mean.position, origin)
    assert math.hypot(d.north, d.east) < 1e-3
    assert est.mean.heading == pytest.approx(truth.heading, abs=1e-9)
    assert est.cov.shape == (3, 3)


def test_second_stage_needs_two_landmarks(origin):
    chart, truth, targets = _scene(origin, {"A": (1500.0, 800.0)})
    assert not estimate_second_stage(targets, chart, _first(truth)).available
    assert not estimate_second_stage(
        targets, chart, PoseEstimate.unavailable("first", "x")).available
