"""Synthetic charts and trajectories for simulation and tests."""

from __future__ import annotations

import math

import numpy as np

from .chart import Chart, chart_from_ned
from .geodesy import GeodeticPoint, Pose, to_geo_arrays

DEFAULT_ORIGIN = GeodeticPoint.from_degrees(55.0, 10.5)


def circle(center, radius: float, n: int = 720) -> np.ndarray:
    """Closed circle polyline in NED, ``n`` segments."""
    t = 2 * np.pi * np.arange(n + 1) / n
    t[-1] = 0.0
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


def blob(center, radius: float, rng: np.random.Generator, n: int = 48,
         roughness: float = 0.3) -> np.ndarray:
    """Star-shaped island outline with a smooth random radius profile."""
    t = 2 * np.pi * np.arange(n) / n
    r = np.ones(n)
    for k in range(1, 5):
        amp = roughness * rng.normal() / k
        r += amp * np.cos(k * t + rng.uniform(0, 2 * np.pi))
    r = radius * np.clip(r, 0.4, None)
    pts = np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])
    return np.vstack([pts, pts[:1]])


def archipelago(origin: GeodeticPoint = DEFAULT_ORIGIN, seed: int = 7, n_islands: int = 9,
                extent: float = 4500.0, clear_radius: float = 900.0,
                n_buoys: int = 8) -> Chart:
    """Random islands around ``origin`` with a clear channel near the origin.

    Buoys are scattered in open water, at least 150 m from any island.
    """
    rng = np.random.default_rng(seed)
    islands = []
    centers = []
    while len(islands) < n_islands:
        c = rng.uniform(-extent, extent, 2)
        rad = rng.uniform(250.0, 700.0)
        if np.hypot(*c) < clear_radius + 1.4 * rad:
            continue
        if any(np.hypot(*(c - c2)) < 1.4 * (rad + r2) for c2, r2 in centers):
            continue
        centers.append((c, rad))
        islands.append(blob(c, rad, rng))
    buoys = {}
    while len(buoys) < n_buoys:
        p = rng.uniform(-2500.0, 2500.0, 2)
        if np.hypot(*p) < 150.0:
            continue
        if any(np.hypot(*(p - c)) < 1.4 * r + 150.0 for c, r in centers):
            continue
        buoys[f"B{len(buoys) + 1}"] = tuple(p)
    return chart_from_ned(origin, islands, buoys)


def straight_coast(origin: GeodeticPoint = DEFAULT_ORIGIN, north_offset: float = 1000.0,
                   half_length: float = 20000.0) -> Chart:
    """A single east-west coastline ``north_offset`` metres north of ``origin``."""
    line = np.array([[north_offset, -half_length], [north_offset, half_length]])
    return chart_from_ned(origin, [line])


def lagoon(origin: GeodeticPoint = DEFAULT_ORIGIN, radius: float = 1000.0,
           n: int = 1440) -> Chart:
    """Ring coastline of ``radius`` around ``origin`` (ship inside)."""
    return chart_from_ned(origin, [circle((0.0, 0.0), radius, n)])


def waypoint_trajectory(origin: GeodeticPoint, waypoints_ned, speed: float,
                        sample_period: float, duration: float | None = None,
                        t0: float = 0.0):
    """Constant-speed track along NED waypoints, restarting from the first if ``duration`` is longer.

    Returns ``(times, poses)``; heading follows the leg direction.
    """
    wp = np.asarray(waypoints_ned, dtype=float)
    legs = np.diff(wp, axis=0)
    lengths = np.hypot(legs[:, 0], legs[:, 1])
    if np.any(lengths <= 0):
        raise ValueError("consecutive waypoints must differ")
    total = float(lengths.sum())
    if duration is None:
        duration = total / speed
    times = t0 + np.arange(0.0, duration + 1e-9, sample_period)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    poses = []
    for t in times:
        d = (t - t0) * speed
        s = d % total
        if s == 0.0 and d > 0:
            s = total  # end of a lap: stay on the last leg
        k = min(int(np.searchsorted(cum, s, side="right") - 1), len(legs) - 1)
        frac = (s - cum[k]) / lengths[k]
        n, e = wp[k] + frac * legs[k]
        lat, lon = to_geo_arrays(n, e, origin)
        poses.append(Pose(GeodeticPoint(float(lat), float(lon)),
                          math.atan2(legs[k, 1], legs[k, 0])))
    return times, poses


def straight_trajectory(origin: GeodeticPoint, speed: float, heading: float,
                        sample_period: float, duration: float, start_ned=(0.0, 0.0)):
    n0, e0 = start_ned
    times = np.arange(0.0, duration + 1e-9, sample_period)
    n = n0 + speed * times * math.cos(heading)
    e = e0 + speed * times * math.sin(heading)
    lat, lon = to_geo_arrays(n, e, origin)
    poses = [Pose(GeodeticPoint(float(a), float(b)), heading) for a, b in zip(lat, lon)]
    return times, poses
