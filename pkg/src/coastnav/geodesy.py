"""WGS84 radii of curvature and the zero-altitude tangent-plane transforms.

All angles are radians.  The tangent plane is a North-East plane at sea level;
both directions of the transform evaluate the radii at the origin latitude so
that ``to_geo`` is the exact algebraic inverse of ``to_ned``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Wgs84Params:
    a: float = 6378137.0
    b: float = 6356752.3142

    def __post_init__(self) -> None:
        if not 0.0 < self.b < self.a:
            raise ValueError(f"need 0 < b < a, got a={self.a}, b={self.b}")

    @property
    def e2(self) -> float:
        return 1.0 - self.b**2 / self.a**2


WGS84 = Wgs84Params()


@dataclass(frozen=True)
class GeodeticPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("geodetic coordinates must be finite")
        if abs(self.lat) > math.pi / 2 + 1e-12:
            raise ValueError(f"latitude {self.lat} rad outside [-pi/2, pi/2]")
        if abs(self.lon) > math.pi + 1e-12:
            raise ValueError(f"longitude {self.lon} rad outside [-pi, pi]")

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float) -> GeodeticPoint:
        return cls(math.radians(lat_deg), math.radians(lon_deg))

    def to_degrees(self) -> tuple[float, float]:
        return math.degrees(self.lat), math.degrees(self.lon)


@dataclass(frozen=True)
class NedPoint:
    north: float
    east: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.north) and math.isfinite(self.east)):
            raise ValueError("NED coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.north, self.east])


def wrap_angle(x):
    """Wrap to (-pi, pi]. Works on scalars and arrays."""
    y = np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)
    if np.ndim(y) == 0:
        return float(y)
    return y


@dataclass(frozen=True)
class Pose:
    position: GeodeticPoint
    heading: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))


def radii_of_curvature(lat, params: Wgs84Params = WGS84):
    """Prime-vertical (N) and meridian (M) radii of curvature at ``lat``."""
    e2 = params.e2
    s2 = np.sin(lat) ** 2
    w = 1.0 - e2 * s2
    n = params.a / np.sqrt(w)
    m = params.a * (1.0 - e2) / w**1.5
    if np.ndim(n) == 0:
        return float(n), float(m)
    return n, m


def _scales(origin_lat: float, params: Wgs84Params) -> tuple[float, float]:
    n, m = radii_of_curvature(origin_lat, params)
    return m, n * math.cos(origin_lat)


def _wrap_dlon(dlon):
    return np.mod(np.asarray(dlon, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


def to_ned_arrays(lat, lon, origin: GeodeticPoint, params: Wgs84Params = WGS84):
    """Vectorised ``to_ned``: returns ``(north, east)`` arrays in meters."""
    m_scale, e_scale = _scales(origin.lat, params)
    north = m_scale * (np.asarray(lat, dtype=float) - origin.lat)
    east = e_scale * _wrap_dlon(np.asarray(lon, dtype=float) - origin.lon)
    return north, east


def to_geo_arrays(north, east, origin: GeodeticPoint, params: Wgs84Params = WGS84):
    """Vectorised ``to_geo``: returns ``(lat, lon)`` arrays in radians."""
    m_scale, e_scale = _scales(origin.lat, params)
    lat = np.asarray(north, dtype=float) / m_scale + origin.lat
    lon = np.asarray(east, dtype=float) / e_scale + origin.lon
    return lat, lon


def to_ned(p: GeodeticPoint, origin: GeodeticPoint, params: Wgs84Params = WGS84) -> NedPoint:
    """Map a geodetic point into the tangent plane at ``origin``.

    Valid for offsets of a few kilometres (keep ``|p - origin|`` under about
    half a degree); the map is linear in the coordinate difference.
    """
    north, east = to_ned_arrays(p.lat, p.lon, origin, params)
    return NedPoint(float(north), float(east))


def to_geo(p: NedPoint, origin: GeodeticPoint, params: Wgs84Params = WGS84) -> GeodeticPoint:
    lat, lon = to_geo_arrays(p.north, p.east, origin, params)
    return GeodeticPoint(float(lat), float(wrap_angle(lon)))


def polar_to_ned(rho, angle):
    """Polar vector ``rho`` at ``angle`` clockwise from north, as (north, east)."""
    return rho * np.cos(angle), rho * np.sin(angle)


def offset_pose(pose: Pose, dn: float, de: float, dpsi: float,
                params: Wgs84Params = WGS84) -> Pose:
    """Apply a tangent-plane offset (dn, de, dpsi) to ``pose``."""
    return Pose(to_geo(NedPoint(dn, de), pose.position, params), pose.heading + dpsi)


def shift_arrays(lat0, lon0, north, east, params: Wgs84Params = WGS84):
    """``to_geo`` with one origin per element: move each ``(lat0, lon0)`` by its own offset."""
    lat0 = np.asarray(lat0, dtype=float)
    n, m = radii_of_curvature(lat0, params)
    lat = lat0 + np.asarray(north, dtype=float) / m
    lon = np.asarray(lon0, dtype=float) + np.asarray(east, dtype=float) / (n * np.cos(lat0))
    return lat, wrap_angle(lon)


def difference_arrays(lat, lon, lat0, lon0, params: Wgs84Params = WGS84):
    """``to_ned`` with one origin per element."""
    lat0 = np.asarray(lat0, dtype=float)
    n, m = radii_of_curvature(lat0, params)
    north = m * (np.asarray(lat, dtype=float) - lat0)
    east = n * np.cos(lat0) * _wrap_dlon(np.asarray(lon, dtype=float) - lon0)
    return north, east
