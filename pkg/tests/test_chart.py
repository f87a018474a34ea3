from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coastnav.chart import (Chart, ChartError, EmptySamplesError, ShorelineSamples,
                            brute_force_min_distances, chart_from_geojson, chart_from_ned,
                            chart_to_geojson, extract_shoreline, load_chart, min_distance,
                            save_chart)
from coastnav.geodesy import GeodeticPoint, NedPoint
from coastnav.synthetic import circle, straight_coast


def test_min_distance_straight_coast(origin):
    s = extract_shoreline(straight_coast(origin, 1000.0), origin, 3000.0, 5.0)
    assert min_distance(NedPoint(0.0, 0.0), s) == pytest.approx(1000.0, abs=1e-6)
    # on the coast the distance is at most half a sample spacing
    assert min_distance(NedPoint(1000.0, 1.0), s) <= 2.5 + 1e-9


def test_sample_spacing_bounded(origin):
    chart = chart_from_ned(origin, [circle((0.0, 0.0), 800.0, 37)])
    s = extract_shoreline(chart, origin, 5000.0, 5.0)
    for run in s.runs:
        step = np.hypot(*np.diff(run, axis=0).T)
        assert step.max() <= 5.0 + 1e-9
    # a closed ring stays one contiguous run
    assert len(s.runs) == 1
    assert np.allclose(s.runs[0][0], s.runs[0][-1])


def test_extraction_clips_to_disc(origin):
    s = extract_shoreline(straight_coast(origin, 1000.0), origin, 2000.0, 5.0)
    r = np.hypot(s.points[:, 0], s.points[:, 1])
    assert r.max() <= 2000.0 + 1e-6
    half = np.sqrt(2000.0**2 - 1000.0**2)
    assert s.points[:, 1].min() == pytest.approx(-half, abs=1e-6)
    assert s.points[:, 1].max() == pytest.approx(half, abs=1e-6)


def test_empty_extraction(origin):
    s = extract_shoreline(straight_coast(origin, 9000.0), origin, 2000.0)
    assert s.empty
    with pytest.raises(EmptySamplesError):
        s.min_distances(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        extract_shoreline(straight_coast(origin), origin, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_index_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3000, 3000, (rng.integers(1, 400), 2))
    s = ShorelineSamples(GeodeticPoint(0.0, 0.0), pts, 5.0, (pts,))
    q = rng.uniform(-4000, 4000, (64, 2))
    assert np.array_equal(s.min_distances(q), brute_force_min_distances(q, s))


def test_min_distance_batch_shape():
    pts = np.array([[0.0, 0.0], [10.0, 0.0]])
    s = ShorelineSamples(GeodeticPoint(0.0, 0.0), pts, 5.0, (pts,))
    d = s.min_distances(np.zeros((3, 4, 2)))
    assert d.shape == (3, 4)


def test_landmarks_within(islands, origin):
    near = islands.landmarks_within(origin, 1e6)
    assert len(near) == len(islands.landmarks)
    assert islands.landmarks_within(origin, 1e-3) == []


def test_geojson_round_trip(tmp_path, islands):
    path = tmp_path / "chart.geojson"
    save_chart(islands, path)
    back = load_chart(path)
    assert len(back.shorelines) == len(islands.shorelines)
    for a, b in zip(back.shorelines, islands.shorelines):
        np.testing.assert_allclose(a, b, atol=1e-15)
    assert [lm.id for lm in back.landmarks] == [lm.id for lm in islands.landmarks]


def _fc(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def _feat(kind, gtype, coords, **props):
    return {"type": "Feature", "geometry": {"type": gtype, "coordinates": coords},
            "properties": {"kind": kind, **props}}


def test_geojson_geometry_kinds():
    ring = [[10.0, 55.0], [10.01, 55.0], [10.01, 55.01]]
    chart = chart_from_geojson(_fc(
        _feat("shoreline", "Polygon", [ring]),
        _feat("shoreline", "MultiLineString", [ring, ring]),
        _feat("landmark", "Point", [10.0, 55.0], id="L1")))
    assert len(chart.shorelines) == 3
    assert len(chart.shorelines[0]) == 4  # polygon ring closed
    assert chart.landmark("L1").position.to_degrees() == pytest.approx((55.0, 10.0))


@pytest.mark.parametrize("doc, msg", [
    ({"type": "Feature"}, "FeatureCollection"),
    (_fc(), "no shoreline"),
    (_fc(_feat("shoreline", "LineString", [[10.0, 95.0], [10.0, 55.0]], id="bad")),
     "bad"),
    (_fc(_feat("shoreline", "LineString", [[10.0, 55.0]])), "2 vertices"),
    (_fc(_feat("landmark", "Point", [10.0, 55.0])), "without an id"),
    (_fc(_feat("shoreline", "Point", [10.0, 55.0])), "unsupported"),
])
def test_geojson_errors(doc, msg):
    with pytest.raises(ChartError, match=msg):
        chart_from_geojson(doc)


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "x.geojson"
    p.write_text('{\n "type": \n}')
    with pytest.raises(ChartError, match="line"):
        load_chart(p)


def test_duplicate_landmark_ids(origin):
    marks = chart_from_ned(origin, [], {"A": (0.0, 0.0)}).landmarks
    with pytest.raises(ChartError):
        Chart((), marks * 2)


def test_chart_rejects_short_line():
    with pytest.raises(ChartError):
        Chart((np.zeros((1, 2)),))


def test_chart_json_is_plain(islands):
    json.dumps(chart_to_geojson(islands))
