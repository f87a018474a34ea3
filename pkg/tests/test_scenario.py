from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from coastnav.detect import DetectorConfig
from coastnav.geodesy import GeodeticPoint, difference_arrays, shift_arrays, to_geo, to_ned
from coastnav.geodesy import NedPoint
from coastnav.scenario import (BimodalResidualModel, FaultSpec, GridPoint, Mission, RunResult,
                               _mc_plan, calibrate_detector, grid_points, inject_fault,
                               monte_carlo, nominal_residuals, penalized_t_d, performance_index,
                               residual_slope, residual_stream, run_mission, tune_detector)
from coastnav.synthetic import straight_trajectory, waypoint_trajectory

SMALL = DetectorConfig(lam=20, mu=10, o=5, h=4.0)
QUIET = BimodalResidualModel(means=(0.0, 0.0), stds=(0.0, 0.0), far_weight=0.0,
                             direction_spread=0.0)


def _mission(origin, n=240, detector=SMALL, **kw):
    times, poses = straight_trajectory(origin, 5.0, 0.0, 4.96, 4.96 * (n - 1))
    return Mission(times, poses, detector=detector, **kw)


def test_array_helpers_match_scalar(origin):
    rng = np.random.default_rng(0)
    n, e = rng.uniform(-800, 800, (2, 20))
    pts = [to_geo(NedPoint(a, b), origin) for a, b in zip(n, e)]
    lat = np.array([p.lat for p in pts])
    lon = np.array([p.lon for p in pts])
    dn, de = rng.uniform(-300, 300, (2, 20))
    lat2, lon2 = shift_arrays(lat, lon, dn, de)
    for k in range(20):
        q = to_geo(NedPoint(dn[k], de[k]), pts[k])
        assert (lat2[k], lon2[k]) == pytest.approx((q.lat, q.lon), abs=1e-15)
    bn, be = difference_arrays(lat2, lon2, lat, lon)
    np.testing.assert_allclose(bn, dn, atol=1e-6)
    np.testing.assert_allclose(be, de, atol=1e-6)


def test_fault_spec():
    spec = FaultSpec("spoof", 100.0, 20.0)
    assert spec.offset(100.0) == 0.0
    assert spec.offset(100.0 + 180.0) == pytest.approx(60.0)
    assert spec.offset(50.0) == 0.0
    with pytest.raises(ValueError):
        FaultSpec("spoof", 0.0, 0.0)
    with pytest.raises(ValueError):
        FaultSpec("meteor")


def test_spoof_goes_left_of_course(origin):
    track = [origin] * 3
    out = inject_fault(track, [0.0, 60.0, 180.0], [0.0, 0.0, 0.0], FaultSpec("spoof", 0.0, 20.0))
    d = to_ned(out[2], origin)
    # heading north: left is west
    assert (d.north, d.east) == pytest.approx((0.0, -60.0), abs=1e-6)
    right = inject_fault(track, [0.0, 60.0, 180.0], [0.0] * 3,
                         FaultSpec("spoof", 0.0, 20.0, side="right"))
    assert to_ned(right[2], origin).east == pytest.approx(60.0, abs=1e-6)
    assert out[0] == origin


def test_jam_freezes_and_none_is_identity(origin):
    track = [to_geo(NedPoint(10.0 * k, 0.0), origin) for k in range(5)]
    t = [0.0, 5.0, 10.0, 15.0, 20.0]
    out = inject_fault(track, t, [0.0] * 5, FaultSpec("jam", 11.0))
    assert out[:3] == track[:3]
    assert out[3] == out[4] == track[2]
    assert inject_fault(track, t, [0.0] * 5, FaultSpec("none")) == track


def test_mission_validation(origin):
    with pytest.raises(ValueError):
        _mission(origin, n=20)
    times, poses = straight_trajectory(origin, 5.0, 0.0, 4.96, 4.96 * 99)
    with pytest.raises(ValueError):
        Mission(times[::-1], poses, detector=SMALL)
    with pytest.raises(ValueError):
        Mission(times, poses, detector=SMALL, residual_mode="estimator")


def test_determinism(origin):
    m = _mission(origin, rng_seed=5)
    spec = FaultSpec("spoof", 600.0, 20.0)
    a, b = run_mission(m, spec), run_mission(m, spec)
    assert np.array_equal(a.residuals, b.residuals)
    assert np.array_equal(a.g_kde, b.g_kde, equal_nan=True)
    assert a.source == b.source
    assert not np.array_equal(run_mission(m, spec, seed=6).residuals, a.residuals)


def test_jam_residual_slope_matches_speed(origin):
    m = _mission(origin, gnss_sigma=0.0, residual_model=QUIET)
    r = residual_stream(m, FaultSpec("jam", 300.0), np.random.default_rng(0))
    assert residual_slope(m.times, r, 300.0, 800.0) == pytest.approx(5.0, rel=0.05)


def test_combined_is_min_of_individual(origin):
    m = _mission(origin, rng_seed=1)
    streams = nominal_residuals(m, 3, 0)
    m = m.with_detector(calibrate_detector(streams, m.detector, 1e-2)[0])
    for seed in range(5):
        res = run_mission(m, FaultSpec("spoof", 500.0, 60.0), seed=seed)
        present = [t for t in (res.t_d_gauss, res.t_d_kde) if t is not None]
        assert res.t_d_combined == (min(present) if present else None)
        assert res.t_d_combined is None or res.t_d_combined >= 0


def test_monte_carlo_single_run_equals_run_mission(origin):
    m = _mission(origin, rng_seed=2)
    (res,) = monte_carlo(m, FaultSpec("spoof", 0.0, 20.0), 1, seed=9)
    ((spec, ss),) = _mc_plan(m, FaultSpec("spoof", 0.0, 20.0), 1, 9)
    again = run_mission(m, spec, ss)
    assert res.fault == spec
    assert np.array_equal(res.residuals, again.residuals)
    with pytest.raises(ValueError):
        monte_carlo(m, FaultSpec("spoof", 0.0, 20.0), 0, seed=1)


def test_monte_carlo_parallel_matches_serial(origin):
    m = _mission(origin, rng_seed=2)
    a = monte_carlo(m, FaultSpec("spoof", 0.0, 20.0), 3, seed=4, jobs=1)
    b = monte_carlo(m, FaultSpec("spoof", 0.0, 20.0), 3, seed=4, jobs=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.residuals, y.residuals)
        assert x.alarm_time_kde == y.alarm_time_kde


def test_onsets_uniform(origin):
    m = _mission(origin)
    lo, hi = m.onset_window()
    onsets = np.array([s.t_onset for s, _ in _mc_plan(m, FaultSpec("spoof", 0, 20), 1000, 3)])
    assert onsets.min() >= lo and onsets.max() <= hi
    counts, _ = np.histogram(onsets, bins=10, range=(lo, hi))
    assert stats.chisquare(counts).pvalue > 0.05


def _fake(t_onset, t_g, t_k, end=1000.0):
    times = np.array([0.0, end])
    z = np.zeros(2)
    return RunResult(times, z, z, z, np.zeros(2, bool), ("none", "none"),
                     FaultSpec("spoof", t_onset, 20.0),
                     None if t_g is None else t_onset + t_g,
                     None if t_k is None else t_onset + t_k)


def test_performance_index():
    runs = [_fake(100.0, 50.0, 30.0), _fake(200.0, None, 70.0), _fake(300.0, None, None)]
    assert performance_index(runs, "kde") == pytest.approx(30.0**2 + 70.0**2 + 700.0**2)
    assert performance_index(runs, "gauss") == pytest.approx(50.0**2 + 800.0**2 + 700.0**2)
    assert performance_index(runs, "combined") == pytest.approx(30.0**2 + 70.0**2 + 700.0**2)
    assert penalized_t_d(runs[2], "combined") == 700.0
    assert runs[0].summary()["J_contribution"] == pytest.approx(900.0)


def test_no_fault_false_alarm_budget(origin):
    # thresholds set so that a whole nominal run alarms with probability 1e-3
    m = _mission(origin, n=120, rng_seed=3)
    cal = nominal_residuals(m, 1000, 100)
    m = m.with_detector(calibrate_detector(cal, m.detector, 1e-3, per_run=True)[0])
    quiet = [not run_mission(m, FaultSpec("none"), seed=s).alarm.any() for s in range(100)]
    assert np.mean(quiet) >= 0.95


def test_larger_spoof_detected_no_later(origin):
    m = _mission(origin, rng_seed=4)
    m = m.with_detector(calibrate_detector(nominal_residuals(m, 5, 1), m.detector, 1e-3)[0])
    med = []
    for slope in (20.0, 40.0):
        runs = monte_carlo(m, FaultSpec("spoof", 0.0, slope), 100, seed=12)
        med.append(np.median([penalized_t_d(r, "combined") for r in runs]))
    assert med[1] <= med[0]


def test_tune_single_point_and_ties(origin):
    m = _mission(origin, rng_seed=5)
    only = grid_points([10], [20], [5], [4.0])
    res = tune_detector(m, only, 5, seed=1)
    assert res.best_gauss == res.best_kde == only[0]
    # h does not change the Gaussian statistic: all h tie, smallest wins
    res = tune_detector(m, grid_points([10], [20], [5], [8.0, 2.0]), 5, seed=1)
    assert res.best_gauss.h == 2.0
    with pytest.raises(ValueError):
        tune_detector(m, [], 5, seed=1)


def test_tune_h_near_dense_optimum(origin):
    m = _mission(origin, n=300, rng_seed=6)
    dense = [0.5 * k for k in range(1, 25)]
    coarse = dense[::4]
    template = FaultSpec("spoof", 0.0, 40.0)
    a = tune_detector(m, grid_points([10], [20], [5], dense), 20, seed=3, template=template)
    b = tune_detector(m, grid_points([10], [20], [5], coarse), 20, seed=3, template=template)
    assert abs(b.best_kde.h - a.best_kde.h) <= coarse[1] - coarse[0]


def test_waypoint_trajectory(origin):
    times, poses = waypoint_trajectory(origin, [(0, 0), (100, 0), (100, 100)], 10.0, 1.0)
    assert len(times) == 21
    assert poses[5].heading == pytest.approx(0.0)
    assert poses[15].heading == pytest.approx(math.pi / 2)
    d = to_ned(poses[-1].position, origin)
    assert (d.north, d.east) == pytest.approx((100.0, 100.0), abs=1e-6)
