import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import cv_track, state
from vrupred.scene import (ActorType, LayerType, MapFormatError, dump_map, examples_from_states, load_map,
                           load_tracks, parse_map, read_light_log, read_track_log, save_map, write_light_log,
                           write_track_log)

SQUARE = [[0, 0], [10, 0], [10, 10], [0, 10]]


def test_minimal_map_one_layer():
    m = parse_map({"layers": {"road_polygon": [{"polygon": SQUARE}]}})
    assert list(m.layers) == [LayerType.ROAD_POLYGON]
    assert m.element_counts() == {"road_polygon": 1}


@pytest.mark.parametrize("doc, match", [
    ({"layers": {"lane_line": [{"polyline": [[0, 0], [1, 0]], "attrs": {"id": "l"}}]}}, "direction"),
    ({"layers": {"road_polygon": [{"polygon": [[0, 0], [1, 0]]}]}}, "3 vertices"),
    ({"layers": {"road_polygon": [{"polygon": [[0, 0], [1, 1], [1, 0], [0, 1]]}]}}, "self-intersecting"),
    ({"layers": {"sidewalk": []}}, "unknown layer"),
    ({"layers": {"actor_box": []}}, "per-frame"),
    ({"nope": 1}, "layers"),
    ({"layers": {"lane_line": [{"polyline": [[0, 0], [1, 0]], "attrs": {"id": "l", "direction": 4.0}}]}},
     "normalized"),
    ({"layers": {"road_polygon": [{"polygon": [[0, 0], ["a", 0], [1, 1]]}]}}, "numeric"),
    ({"layers": {}, "traffic_lights": [{"position": [0, 0], "lane": "x"}]}, "unknown lane"),
])
def test_map_validation_errors(doc, match):
    with pytest.raises(MapFormatError, match=match):
        parse_map(doc)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "layers": {\n  oops\n}')
    with pytest.raises(MapFormatError, match="line 3"):
        load_map(p)


def test_demo_fixture_counts_match_file(fixtures):
    raw = json.loads((fixtures / "demo_map.json").read_text())
    m = load_map(fixtures / "demo_map.json")
    assert m.element_counts() == {k: len(v) for k, v in raw["layers"].items()}
    assert len(m.traffic_lights) == len(raw["traffic_lights"])
    assert m.element_counts()["crosswalk"] == 4


def test_map_round_trip(fixtures, tmp_path):
    raw = json.loads((fixtures / "demo_map.json").read_text())
    m = load_map(fixtures / "demo_map.json")
    assert dump_map(m) == dump_map(parse_map(dump_map(m)))
    assert dump_map(m)["layers"].keys() == raw["layers"].keys()
    save_map(m, tmp_path / "m.json")
    assert (tmp_path / "m.json").read_bytes() == (fixtures / "demo_map.json").read_bytes()


def test_track_log_round_trip(fixtures, tmp_path):
    states = read_track_log(fixtures / "tracks.jsonl")
    out = tmp_path / "t.jsonl"
    write_track_log(states, out)
    assert out.read_bytes() == (fixtures / "tracks.jsonl").read_bytes()


def test_track_log_bad_line(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"actor_id": "a"}\n')
    with pytest.raises(MapFormatError, match="line 1"):
        read_track_log(p)


def test_light_log(fixtures):
    lights = read_light_log(fixtures / "lights.jsonl")
    assert sorted(lights) == [0, 1, 2, 3, 4]
    assert lights[2] == {0: "red", 1: "green", 2: "red", 3: "green"}


def test_light_log_round_trip(fixtures, tmp_path):
    lights = read_light_log(fixtures / "lights.jsonl")
    records = [(k * 0.1, i, st) for k in sorted(lights) for i, st in sorted(lights[k].items())]
    write_light_log(records, tmp_path / "l.jsonl")
    assert (tmp_path / "l.jsonl").read_bytes() == (fixtures / "lights.jsonl").read_bytes()


def test_bbox_must_be_positive():
    with pytest.raises(ValueError):
        state(bbox=(0.0, 1.0))


def test_window_count():
    examples, skipped = examples_from_states(cv_track(n=61), 60)
    assert len(examples) == 1 and skipped == 0


def test_cv_ground_truth_in_actor_frame():
    (ex, *_), _ = examples_from_states(cv_track(n=11, x0=3, y0=-2, heading=2.1, v=1.0), 10)
    np.testing.assert_allclose(ex.ground_truth[:, 0], np.arange(1, 11) * 0.1, atol=1e-9)
    np.testing.assert_allclose(ex.ground_truth[:, 1], 0.0, atol=1e-9)


def test_short_track_yields_nothing():
    states = cv_track("long", n=61) + cv_track("short", n=30)
    examples, _ = examples_from_states(states, 60)
    assert [e.target.actor_id for e in examples] == ["long"]


def test_gap_skips_windows_with_warning(tmp_path):
    track = cv_track(n=30)
    del track[15]
    examples, skipped = examples_from_states(track, 10)
    assert skipped > 0
    for e in examples:
        assert e.ground_truth.shape == (10, 2)
    p = tmp_path / "gap.jsonl"
    write_track_log(track, p)
    with pytest.warns(UserWarning, match="skipped"):
        load_tracks(p, 10)


def test_context_history_and_stride():
    states = cv_track("a", n=30) + cv_track("b", n=30, y0=5)
    examples, _ = examples_from_states(states, 10, stride=5)
    a = [e for e in examples if e.target.actor_id == "a"]
    assert [round(e.target.timestamp, 6) for e in a] == [0.0, 0.5, 1.0, 1.5]
    assert {s.actor_id for s in a[1].context} == {"a", "b"}
    assert len(a[0].history) == 0 and len(a[-1].history) == 10
    assert a[-1].history[-1].timestamp < a[-1].target.timestamp


def test_ground_truth_matches_independent_transform(rng):
    states = []
    for i in range(40):
        x, y, h = rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-math.pi, math.pi)
        for k in range(36):
            # wiggly path: world positions chosen freely
            states.append(state(f"r{i}", round(0.1 * k, 6), x + 0.3 * k + math.sin(k), y + 0.1 * k * k, h))
    examples, _ = examples_from_states(states, 10)
    assert len(examples) >= 1000
    by_key = {(s.actor_id, round(s.timestamp, 6)): s for s in states}
    for ex in examples[:1000]:
        t0 = ex.target
        c, s = math.cos(t0.heading), math.sin(t0.heading)
        for k in range(10):
            fut = by_key[(t0.actor_id, round(t0.timestamp + 0.1 * (k + 1), 6))]
            dx, dy = fut.xy - t0.xy
            assert abs(ex.ground_truth[k, 0] - (c * dx + s * dy)) < 1e-9
            assert abs(ex.ground_truth[k, 1] - (-s * dx + c * dy)) < 1e-9


def test_non_increasing_timestamps_rejected():
    track = cv_track(n=5)
    track[3] = track[2]
    with pytest.raises(MapFormatError):
        examples_from_states(track, 2)


@given(st.integers(1, 40), st.integers(1, 30))
def test_window_arithmetic(n, h):
    examples, _ = examples_from_states(cv_track(n=n), h)
    assert len(examples) == max(0, n - h)


def test_rotated_polygon_with_collinear_edges_is_simple():
    from vrupred.scene import is_simple_polygon
    cross = np.array([[-60, -7], [-7, -7], [-7, -60], [7, -60], [7, -7], [60, -7], [60, 7], [7, 7], [7, 60],
                      [-7, 60], [-7, 7], [-60, 7]], float)
    for phi in np.linspace(-3, 3, 25):
        c, s = math.cos(phi), math.sin(phi)
        assert is_simple_polygon(cross @ np.array([[c, s], [-s, c]]) + [3.1, -7.7])
    assert not is_simple_polygon(np.array([[0, 0], [2, 2], [2, 0], [0, 2]], float))
