"""Vector charts: shoreline polylines, point landmarks, and distance queries.

Charts are read from GeoJSON.  Shorelines are densified into point samples in
a local tangent plane; the minimum distance from any point to those samples is
answered through a k-d tree with an exact re-check, so results are identical
to a brute-force scan.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geodesy import GeodeticPoint, to_geo_arrays, to_ned_arrays


class ChartError(ValueError):
    """Raised for malformed or empty chart files."""


class EmptySamplesError(ValueError):
    """Raised when a distance query is made against an empty shoreline sample set."""


@dataclass(frozen=True)
class Landmark:
    id: str
    position: GeodeticPoint


@dataclass(frozen=True)
class Chart:
    """Shorelines as ``(k, 2)`` arrays of ``(lat, lon)`` radians, plus landmarks."""

    shorelines: tuple[np.ndarray, ...]
    landmarks: tuple[Landmark, ...] = ()

    def __post_init__(self) -> None:
        lines = tuple(np.asarray(s, dtype=float).reshape(-1, 2) for s in self.shorelines)
        for i, line in enumerate(lines):
            if len(line) < 2:
                raise ChartError(f"shoreline {i} has {len(line)} vertices, need >= 2")
        object.__setattr__(self, "shorelines", lines)
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise ChartError("landmark ids must be unique")

    def landmark(self, landmark_id: str) -> Landmark:
        for lm in self.landmarks:
            if lm.id == landmark_id:
                return lm
        raise KeyError(landmark_id)

    def landmarks_within(self, origin: GeodeticPoint, radius: float) -> list[Landmark]:
        if not self.landmarks:
            return []
        lat = [lm.position.lat for lm in self.landmarks]
        lon = [lm.position.lon for lm in self.landmarks]
        n, e = to_ned_arrays(lat, lon, origin)
        keep = np.hypot(n, e) <= radius
        return [lm for lm, k in zip(self.landmarks, keep) if k]


@dataclass(frozen=True, eq=False)
class ShorelineSamples:
    """Densified shoreline points in the tangent plane at ``origin``.

    ``runs`` keeps the contiguous pieces so that ray casting can treat
    consecutive samples as segments; ``points`` is their concatenation.
    """

    origin: GeodeticPoint
    points: np.ndarray
    spacing: float
    runs: tuple[np.ndarray, ...] = ()
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_tree", cKDTree(pts) if len(pts) else None)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every segment between consecutive samples."""
        starts, ends = [], []
        for run in self.runs:
            if len(run) >= 2:
                starts.append(run[:-1])
                ends.append(run[1:])
        if not starts:
            return np.empty((0, 2)), np.empty((0, 2))
        return np.concatenate(starts), np.concatenate(ends)

    def min_distances(self, points) -> np.ndarray:
        """Distance from each ``(north, east)`` row to its nearest sample."""
        if self._tree is None:
            raise EmptySamplesError("no shoreline samples in range")
        q = np.asarray(points, dtype=float)
        shape = q.shape[:-1]
        q = q.reshape(-1, 2)
        k = min(4, len(self.points))
        _, idx = self._tree.query(q, k=k)
        idx = np.asarray(idx).reshape(len(q), k)
        cand = self.points[idx]
        dx = cand[..., 0] - q[:, None, 0]
        dy = cand[..., 1] - q[:, None, 1]
        # same arithmetic as a brute-force scan, so the result is bit-equal
        d = np.sqrt(dx * dx + dy * dy).min(axis=1)
        return d.reshape(shape)


def min_distance(p, samples: ShorelineSamples) -> float:
    """Minimum Euclidean distance from a NED point to the shoreline samples."""
    q = p.as_array() if hasattr(p, "as_array") else np.asarray(p, dtype=float)
    return float(samples.min_distances(q.reshape(1, 2))[0])


def brute_force_min_distances(points, samples: ShorelineSamples) -> np.ndarray:
    q = np.asarray(points, dtype=float).reshape(-1, 2)
    if samples.empty:
        raise EmptySamplesError("no shoreline samples in range")
    out = np.empty(len(q))
    for i, (x, y) in enumerate(q):
        dx = samples.points[:, 0] - x
        dy = samples.points[:, 1] - y
        out[i] = np.sqrt(dx * dx + dy * dy).min()
    return out


def _clip_to_disc(a: np.ndarray, b: np.ndarray, radius: float) -> tuple[float, float] | None:
    d = b - a
    qa = float(d @ d)
    if qa == 0.0:
        return None
    qb = 2.0 * float(a @ d)
    qc = float(a @ a) - radius * radius
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return None
    root = math.sqrt(disc)
    t0 = max(0.0, (-qb - root) / (2.0 * qa))
    t1 = min(1.0, (-qb + root) / (2.0 * qa))
    if t0 > t1:
        return None
    return t0, t1


def extract_shoreline(chart: Chart, origin: GeodeticPoint, radius: float,
                      spacing: float = 5.0) -> ShorelineSamples:
    """Densify every shoreline piece inside the disc of ``radius`` around ``origin``."""
    if radius <= 0 or spacing <= 0:
        raise ValueError("radius and spacing must be positive")
    runs: list[np.ndarray] = []
    for line in chart.shorelines:
        n, e = to_ned_arrays(line[:, 0], line[:, 1], origin)
        verts = np.column_stack([n, e])
        current: list[np.ndarray] = []
        reached_end = False
        for a, b in zip(verts[:-1], verts[1:]):
            clip = _clip_to_disc(a, b, radius)
            if clip is None:
                if current:
                    runs.append(np.concatenate(current))
                    current = []
                reached_end = False
                continue
            t0, t1 = clip
            length = (t1 - t0) * float(np.hypot(*(b - a)))
            k = max(1, math.ceil(length / spacing - 1e-9))
            t = t0 + (t1 - t0) * np.arange(k + 1) / k
            pts = a + t[:, None] * (b - a)
            if current and reached_end and t0 == 0.0:
                pts = pts[1:]
            elif current:
                runs.append(np.concatenate(current))
                current = []
            current.append(pts)
            reached_end = t1 == 1.0
        if current:
            runs.append(np.concatenate(current))
    points = np.concatenate(runs) if runs else np.empty((0, 2))
    return ShorelineSamples(origin=origin, points=points, spacing=spacing, runs=tuple(runs))


# --- GeoJSON I/O -----------------------------------------------------------

def _ring_to_radians(coords, where: str, close: bool) -> np.ndarray:
    try:
        arr = np.asarray(coords, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ChartError(f"{where}: coordinates are not numeric") from exc
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ChartError(f"{where}: expected a list of [lon, lat] pairs")
    lon, lat = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(arr[:, :2])):
        raise ChartError(f"{where}: non-finite coordinate")
    if np.any(np.abs(lat) > 90.0):
        raise ChartError(f"{where}: latitude {lat[np.abs(lat) > 90][0]} deg out of range")
    if np.any(np.abs(lon) > 180.0):
        raise ChartError(f"{where}: longitude {lon[np.abs(lon) > 180][0]} deg out of range")
    out = np.radians(np.column_stack([lat, lon]))
    if close and len(out) >= 2 and not np.array_equal(out[0], out[-1]):
        out = np.vstack([out, out[:1]])
    if len(out) < 2:
        raise ChartError(f"{where}: shoreline needs at least 2 vertices")
    return out


def chart_from_geojson(doc: dict) -> Chart:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ChartError("chart must be a GeoJSON FeatureCollection")
    shorelines: list[np.ndarray] = []
    landmarks: list[Landmark] = []
    for i, feat in enumerate(doc.get("features") or []):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        kind = props.get("kind")
        gtype = geom.get("type")
        where = f"feature {i}" + (f" ({props['id']})" if "id" in props else "")
        coords = geom.get("coordinates")
        if kind == "shoreline":
            if gtype == "LineString":
                shorelines.append(_ring_to_radians(coords, where, close=False))
            elif gtype == "MultiLineString":
                shorelines.extend(_ring_to_radians(c, where, close=False) for c in coords)
            elif gtype == "Polygon":
                shorelines.extend(_ring_to_radians(c, where, close=True) for c in coords)
            elif gtype == "MultiPolygon":
                shorelines.extend(_ring_to_radians(c, where, close=True)
                                  for poly in coords for c in poly)
            else:
                raise ChartError(f"{where}: unsupported shoreline geometry {gtype!r}")
        elif kind == "landmark":
            if gtype != "Point":
                raise ChartError(f"{where}: landmark geometry must be a Point")
            if "id" not in props:
                raise ChartError(f"{where}: landmark without an id")
            try:
                lon, lat = float(coords[0]), float(coords[1])
            except (TypeError, ValueError, IndexError) as exc:
                raise ChartError(f"{where}: bad point coordinates") from exc
            if not (abs(lat) <= 90.0 and abs(lon) <= 180.0):
                raise ChartError(f"{where}: coordinate ({lon}, {lat}) out of range")
            landmarks.append(Landmark(str(props["id"]),
                                      GeodeticPoint.from_degrees(lat, lon)))
    if not shorelines and not landmarks:
        raise ChartError("chart has no shoreline or landmark features")
    return Chart(tuple(shorelines), tuple(landmarks))


def load_chart(path) -> Chart:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ChartError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return chart_from_geojson(doc)


def chart_to_geojson(chart: Chart) -> dict:
    features = []
    for line in chart.shorelines:
        deg = np.degrees(line)
        coords = [[float(lon), float(lat)] for lat, lon in deg]
        closed = len(coords) > 3 and coords[0] == coords[-1]
        geom = ({"type": "Polygon", "coordinates": [coords]} if closed
                else {"type": "LineString", "coordinates": coords})
        features.append({"type": "Feature", "geometry": geom,
                         "properties": {"kind": "shoreline"}})
    for lm in chart.landmarks:
        lat, lon = lm.position.to_degrees()
        features.append({"type": "Feature",
                         "geometry": {"type": "Point", "coordinates": [lon, lat]},
                         "properties": {"kind": "landmark", "id": lm.id}})
    return {"type": "FeatureCollection", "features": features}


def save_chart(chart: Chart, path) -> None:
    Path(path).write_text(json.dumps(chart_to_geojson(chart), indent=1))


def chart_from_ned(origin: GeodeticPoint, shorelines_ned, landmarks_ned=None) -> Chart:
    """Build a chart from tangent-plane geometry around ``origin``.

    ``landmarks_ned`` maps id -> (north, east).
    """
    lines = []
    for line in shorelines_ned:
        arr = np.asarray(line, dtype=float)
        lat, lon = to_geo_arrays(arr[:, 0], arr[:, 1], origin)
        lines.append(np.column_stack([lat, lon]))
    marks = []
    for lid, (n, e) in (landmarks_ned or {}).items():
        lat, lon = to_geo_arrays(n, e, origin)
        marks.append(Landmark(str(lid), GeodeticPoint(float(lat), float(lon))))
    return Chart(tuple(lines), tuple(marks))
