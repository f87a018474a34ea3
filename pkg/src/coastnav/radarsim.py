"""Synthetic radar: shoreline scans and static-target detections.

The simulator holds the ship pose constant over one antenna rotation and works
in the tangent plane centred on the ship.  Bearings are clockwise from the
ship's heading, in ``[0, 2*pi)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chart import Landmark, ShorelineSamples
from .geodesy import Pose, to_geo_arrays, to_ned_arrays

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RadarNoiseParams:
    p_detect: float = 0.9
    sigma_range: float = 10.0
    p_clutter_per_spoke: float = 0.05
    n_spokes: int = 360
    rho_max: float = 5000.0
    sigma_bearing: float = math.radians(0.5)

    def __post_init__(self) -> None:
        for name in ("p_detect", "p_clutter_per_spoke"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.sigma_range < 0 or self.sigma_bearing < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.n_spokes < 1:
            raise ValueError("n_spokes must be >= 1")
        if self.rho_max <= 0:
            raise ValueError("rho_max must be positive")


@dataclass(frozen=True, eq=False)
class RadarScan:
    ranges: np.ndarray
    bearings: np.ndarray
    rho_max: float
    timestamp: float = 0.0
    spoke_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self) -> None:
        r = np.asarray(self.ranges, dtype=float).ravel()
        b = np.asarray(self.bearings, dtype=float).ravel()
        if r.shape != b.shape:
            raise ValueError("ranges and bearings must have the same length")
        if np.any(r <= 0) or np.any(r > self.rho_max):
            raise ValueError("every range must lie in (0, rho_max]")
        spokes = np.asarray(self.spoke_index, dtype=int).ravel()
        if spokes.size == 0:
            spokes = np.full(r.shape, -1, dtype=int)
        object.__setattr__(self, "ranges", r)
        object.__setattr__(self, "bearings", np.mod(b, TWO_PI))
        object.__setattr__(self, "spoke_index", spokes)

    def __len__(self) -> int:
        return len(self.ranges)

    def concat(self, other: RadarScan) -> RadarScan:
        return RadarScan(np.concatenate([self.ranges, other.ranges]),
                         np.concatenate([self.bearings, other.bearings]),
                         max(self.rho_max, other.rho_max), self.timestamp,
                         np.concatenate([self.spoke_index, other.spoke_index]))


@dataclass(frozen=True)
class StaticTarget:
    range: float
    bearing: float
    range_var: float
    bearing_var: float
    truth_id: str | None = None

    def __post_init__(self) -> None:
        if self.range_var < 0 or self.bearing_var < 0:
            raise ValueError("target variances must be non-negative")


def _samples_in_ship_frame(samples: ShorelineSamples, pose: Pose):
    starts, ends = samples.segments()
    if len(starts) == 0:
        return starts, ends
    out = []
    for arr in (starts, ends):
        lat, lon = to_geo_arrays(arr[:, 0], arr[:, 1], samples.origin)
        n, e = to_ned_arrays(lat, lon, pose.position)
        out.append(np.column_stack([n, e]))
    return out[0], out[1]


def ray_ranges(angles: np.ndarray, starts: np.ndarray, ends: np.ndarray,
               rho_max: float, chunk: int = 4096) -> np.ndarray:
    """Nearest ray/segment intersection for rays from the origin.

    ``angles`` are clockwise from north.  Returns ``inf`` where no segment is
    hit within ``rho_max``.
    """
    angles = np.asarray(angles, dtype=float)
    out = np.full(angles.shape, np.inf)
    if len(starts) == 0:
        return out
    dn, de = np.cos(angles)[:, None], np.sin(angles)[:, None]
    for lo in range(0, len(starts), chunk):
        a = starts[lo:lo + chunk]
        b = ends[lo:lo + chunk]
        en = (b[:, 0] - a[:, 0])[None, :]
        ee = (b[:, 1] - a[:, 1])[None, :]
        an = a[None, :, 0]
        ae = a[None, :, 1]
        denom = dn * ee - de * en
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (an * ee - ae * en) / denom
            u = (an * de - ae * dn) / denom
        ok = (denom != 0) & (t > 0) & (u >= 0) & (u <= 1) & (t <= rho_max)
        t = np.where(ok, t, np.inf)
        out = np.minimum(out, t.min(axis=1))
    return out


def cast_scan(true_pose: Pose, samples: ShorelineSamples, noise: RadarNoiseParams,
              rng_seed: int | np.random.Generator | None = None,
              timestamp: float = 0.0) -> RadarScan:
    """One 360 degree scan of the sampled shoreline from ``true_pose``.

    Each spoke returns the nearest shoreline crossing with probability
    ``p_detect`` (Gaussian range noise, clamped into ``(0, rho_max]``) and,
    independently, a clutter return uniform on ``(0, rho_max]``.
    """
    rng = np.random.default_rng(rng_seed)
    n = noise.n_spokes
    spoke_bearing = TWO_PI * np.arange(n) / n
    starts, ends = _samples_in_ship_frame(samples, true_pose)
    true_range = ray_ranges(spoke_bearing + true_pose.heading, starts, ends, noise.rho_max)

    detect_u = rng.random(n)
    range_noise = rng.standard_normal(n) * noise.sigma_range
    clutter_u = rng.random(n)
    clutter_range = noise.rho_max * (1.0 - rng.random(n))

    hit = np.isfinite(true_range) & (detect_u < noise.p_detect)
    hit_range = np.clip(np.where(hit, true_range + range_noise, 1.0), 1e-6, noise.rho_max)
    clutter = clutter_u < noise.p_clutter_per_spoke

    spokes = np.arange(n)
    # per spoke: the shoreline return first, then any clutter return
    sp = np.concatenate([spokes[hit], spokes[clutter]])
    rr = np.concatenate([hit_range[hit], clutter_range[clutter]])
    kind = np.concatenate([np.zeros(hit.sum(), int), np.ones(clutter.sum(), int)])
    order = np.lexsort((kind, sp))
    return RadarScan(rr[order], spoke_bearing[sp[order]], noise.rho_max, timestamp, sp[order])


def true_range_bearing(pose: Pose, landmark: Landmark) -> tuple[float, float]:
    n, e = to_ned_arrays(landmark.position.lat, landmark.position.lon, pose.position)
    rho = float(math.hypot(n, e))
    beta = float(np.mod(math.atan2(e, n) - pose.heading, TWO_PI))
    return rho, beta


def detect_static_targets(true_pose: Pose, landmarks, noise: RadarNoiseParams,
                          rng_seed: int | np.random.Generator | None = None) -> list[StaticTarget]:
    """Simulated output of a static-target tracker.

    Landmarks inside ``rho_max`` are reported with probability ``p_detect``,
    with independent Gaussian range and bearing noise whose variances are
    reported truthfully.
    """
    rng = np.random.default_rng(rng_seed)
    out = []
    for lm in landmarks:
        rho, beta = true_range_bearing(true_pose, lm)
        u, e_r, e_b = rng.random(), rng.standard_normal(), rng.standard_normal()
        if rho > noise.rho_max or u >= noise.p_detect:
            continue
        out.append(StaticTarget(max(rho + noise.sigma_range * e_r, 1e-6),
                                float(np.mod(beta + noise.sigma_bearing * e_b, TWO_PI)),
                                noise.sigma_range**2, noise.sigma_bearing**2, lm.id))
    return out


SCAN_COLUMNS = ("spoke_index", "range_m", "bearing_rad")


def write_scan_csv(scan: RadarScan, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SCAN_COLUMNS)
        for s, r, b in zip(scan.spoke_index, scan.ranges, scan.bearings):
            w.writerow([int(s), repr(float(r)), repr(float(b))])


def read_scan_csv(path, rho_max: float, timestamp: float = 0.0) -> RadarScan:
    with open(Path(path), newline="") as f:
        rows = list(csv.DictReader(f))
    missing = set(SCAN_COLUMNS) - set(rows[0].keys() if rows else SCAN_COLUMNS)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return RadarScan(np.array([float(r["range_m"]) for r in rows]),
                     np.array([float(r["bearing_rad"]) for r in rows]),
                     rho_max, timestamp,
                     np.array([int(r["spoke_index"]) for r in rows], dtype=int))
