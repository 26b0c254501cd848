"""HD-map and track-log data model, file loaders and example extraction.

File formats
------------
Map (single JSON document)::

    {"layers": {"road_polygon": [{"polygon": [[x, y], ...], "attrs": {}}],
                "lane_line": [{"polyline": [[x, y], ...],
                               "attrs": {"id": "EB_in", "direction": 0.0}}], ...},
     "traffic_lights": [{"position": [x, y], "lane": "EB_in"}]}

Track log (JSON lines, one actor state per line)::

    {"actor_id": "b3", "t": 1.2, "x": .., "y": .., "heading": .., "v": .., "a": ..,
     "hcr": .., "length": .., "width": .., "type": "bicyclist"}

Traffic-light log (JSON lines, one light state per line)::

    {"t": 1.2, "light": 0, "state": "red"}
"""
from __future__ import annotations

import enum
import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geom import Point2, Pose, world_to_actor_xy

logger = logging.getLogger(__name__)

DT = 0.1  # tracker period in seconds (10 Hz)
HISTORY_STEPS = 10  # past observations kept per example (UKF warm-up, aux features)


class ActorType(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    BICYCLIST = "bicyclist"
    VEHICLE = "vehicle"


class LayerType(str, enum.Enum):
    ROAD_POLYGON = "road_polygon"
    DRIVEWAY = "driveway"
    CROSSWALK = "crosswalk"
    LANE_LINE = "lane_line"
    TRAFFIC_LIGHT_MARKER = "traffic_light_marker"
    ACTOR_BOX = "actor_box"
    TARGET_ACTOR_BOX = "target_actor_box"


MAP_LAYERS = (LayerType.ROAD_POLYGON, LayerType.DRIVEWAY, LayerType.CROSSWALK, LayerType.LANE_LINE)
POLYGON_LAYERS = {LayerType.ROAD_POLYGON, LayerType.DRIVEWAY, LayerType.CROSSWALK}


class LightState(str, enum.Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"
    UNKNOWN = "unknown"


class MapFormatError(ValueError):
    """Map or track file could not be parsed or violates an invariant."""


@dataclass(frozen=True)
class ActorState:
    actor_id: str
    timestamp: float
    pose: Pose
    velocity: float
    acceleration: float
    heading_change_rate: float
    bbox: tuple[float, float]  # (length, width) in meters
    actor_type: ActorType

    def __post_init__(self):
        if not (self.bbox[0] > 0 and self.bbox[1] > 0):
            raise ValueError(f"bbox dimensions must be positive, got {self.bbox}")
        object.__setattr__(self, "actor_type", ActorType(self.actor_type))

    @property
    def xy(self) -> np.ndarray:
        return self.pose.position.as_array()

    @property
    def heading(self) -> float:
        return self.pose.heading

    def to_record(self) -> dict:
        return {
            "actor_id": self.actor_id,
            "t": round(self.timestamp, 6),
            "x": self.pose.position.x,
            "y": self.pose.position.y,
            "heading": self.pose.heading,
            "v": self.velocity,
            "a": self.acceleration,
            "hcr": self.heading_change_rate,
            "length": self.bbox[0],
            "width": self.bbox[1],
            "type": self.actor_type.value,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "ActorState":
        return cls(
            actor_id=str(rec["actor_id"]),
            timestamp=float(rec["t"]),
            pose=Pose(Point2(float(rec["x"]), float(rec["y"])), float(rec["heading"])),
            velocity=float(rec["v"]),
            acceleration=float(rec["a"]),
            heading_change_rate=float(rec["hcr"]),
            bbox=(float(rec["length"]), float(rec["width"])),
            actor_type=ActorType(rec["type"]),
        )


@dataclass(frozen=True)
class MapElement:
    geometry: np.ndarray  # (k, 2) world meters
    attrs: dict = field(default_factory=dict)

    @property
    def n_segments(self) -> int:
        return len(self.geometry) - 1

    def segment_directions(self) -> np.ndarray:
        """Per-segment lane direction from the ``direction`` attribute."""
        d = self.attrs["direction"]
        if isinstance(d, (list, tuple)):
            return np.asarray(d, dtype=float)
        return np.full(self.n_segments, float(d))


@dataclass(frozen=True)
class VectorLayer:
    layer_type: LayerType
    elements: tuple[MapElement, ...]


@dataclass(frozen=True)
class TrafficLight:
    position: Point2
    lane: str


@dataclass(frozen=True)
class SceneMap:
    layers: dict  # LayerType -> VectorLayer, map layers only
    traffic_lights: tuple[TrafficLight, ...] = ()

    def layer(self, layer_type: LayerType) -> tuple[MapElement, ...]:
        lay = self.layers.get(LayerType(layer_type))
        return lay.elements if lay is not None else ()

    def lane(self, lane_id: str) -> MapElement:
        for el in self.layer(LayerType.LANE_LINE):
            if el.attrs.get("id") == lane_id:
                return el
        raise KeyError(lane_id)

    def element_counts(self) -> dict:
        return {lt.value: len(layer.elements) for lt, layer in self.layers.items()}


@dataclass(frozen=True, eq=False)
class Example:
    """One prediction example: target actor at time ``t_j`` plus everything visible then."""

    target: ActorState
    context: tuple[ActorState, ...]  # all actors at t_j, target included
    scene_map: SceneMap | None
    ground_truth: np.ndarray  # (H, 2) actor-frame future positions
    history: tuple[ActorState, ...] = ()  # past states of the target, oldest first
    light_states: tuple[str, ...] = ()  # per traffic light, at t_j
    tags: tuple[str, ...] = ()

    @property
    def horizon(self) -> int:
        return len(self.ground_truth)

    @property
    def actor_type(self) -> ActorType:
        return self.target.actor_type


# ---------------------------------------------------------------------------
# geometry validation


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        # relative tolerance: rounding must not turn collinear edges into crossings
        ux, uy, vx, vy = b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1]
        cross = ux * vy - uy * vx
        return 0.0 if abs(cross) <= 1e-12 * math.hypot(ux, uy) * math.hypot(vx, vy) else cross

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    return ((d1 == 0 and on_seg(q1, q2, p1)) or (d2 == 0 and on_seg(q1, q2, p2))
            or (d3 == 0 and on_seg(p1, p2, q1)) or (d4 == 0 and on_seg(p1, p2, q2)))


def is_simple_polygon(poly: np.ndarray) -> bool:
    k = len(poly)
    for i in range(k):
        a1, a2 = poly[i], poly[(i + 1) % k]
        for j in range(i + 1, k):
            if j == i or (j + 1) % k == i or j == (i + 1) % k:
                continue  # adjacent edges share a vertex
            if _segments_intersect(a1, a2, poly[j], poly[(j + 1) % k]):
                return False
    return True


def _parse_points(raw, where: str) -> np.ndarray:
    try:
        pts = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MapFormatError(f"{where}: coordinates are not numeric ({exc})") from None
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise MapFormatError(f"{where}: expected a list of [x, y] pairs")
    if not np.all(np.isfinite(pts)):
        raise MapFormatError(f"{where}: coordinates must be finite")
    return pts


def _parse_element(layer_type: LayerType, raw, where: str) -> MapElement:
    if not isinstance(raw, dict):
        raise MapFormatError(f"{where}: element must be an object")
    attrs = dict(raw.get("attrs", {}))
    if layer_type in POLYGON_LAYERS:
        if "polygon" not in raw:
            raise MapFormatError(f"{where}: {layer_type.value} element needs a 'polygon'")
        pts = _parse_points(raw["polygon"], where)
        if len(pts) < 3:
            raise MapFormatError(f"{where}: polygon needs at least 3 vertices")
        if not is_simple_polygon(pts):
            raise MapFormatError(f"{where}: polygon is self-intersecting")
        if layer_type is LayerType.CROSSWALK:
            attrs.setdefault("active", True)
    else:
        if "polyline" not in raw:
            raise MapFormatError(f"{where}: lane_line element needs a 'polyline'")
        pts = _parse_points(raw["polyline"], where)
        if len(pts) < 2:
            raise MapFormatError(f"{where}: polyline needs at least 2 points")
        if "direction" not in attrs:
            raise MapFormatError(f"{where}: lane_line missing 'direction' attribute")
        if "id" not in attrs:
            raise MapFormatError(f"{where}: lane_line missing 'id' attribute")
        d = attrs["direction"]
        dirs = np.atleast_1d(np.asarray(d, dtype=float))
        if isinstance(d, (list, tuple)) and len(dirs) != len(pts) - 1:
            raise MapFormatError(f"{where}: need one direction per polyline segment")
        if not np.all((dirs >= -math.pi) & (dirs < math.pi)):
            raise MapFormatError(f"{where}: lane direction must be normalized to [-pi, pi)")
    return MapElement(pts, attrs)


def parse_map(doc: Mapping, source: str = "<map>") -> SceneMap:
    if not isinstance(doc, Mapping) or "layers" not in doc:
        raise MapFormatError(f"{source}: top-level object must contain 'layers'")
    layers = {}
    for name, elements in doc["layers"].items():
        try:
            lt = LayerType(name)
        except ValueError:
            raise MapFormatError(f"{source}: unknown layer type {name!r}") from None
        if lt not in MAP_LAYERS:
            raise MapFormatError(f"{source}: {name!r} is a per-frame layer and cannot appear in a map")
        parsed = tuple(_parse_element(lt, el, f"{source}: layers.{name}[{i}]")
                       for i, el in enumerate(elements))
        layers[lt] = VectorLayer(lt, parsed)
    lane_ids = [el.attrs["id"] for el in layers.get(LayerType.LANE_LINE, VectorLayer(LayerType.LANE_LINE, ())).elements]
    if len(set(lane_ids)) != len(lane_ids):
        raise MapFormatError(f"{source}: duplicate lane ids")
    lights = []
    for i, raw in enumerate(doc.get("traffic_lights", [])):
        where = f"{source}: traffic_lights[{i}]"
        pos = _parse_points([raw.get("position")], where)[0]
        if raw.get("lane") not in lane_ids:
            raise MapFormatError(f"{where}: unknown lane {raw.get('lane')!r}")
        lights.append(TrafficLight(Point2(*pos), raw["lane"]))
    for el in layers.get(LayerType.CROSSWALK, VectorLayer(LayerType.CROSSWALK, ())).elements:
        li = el.attrs.get("light")
        if li is not None and not (0 <= int(li) < len(lights)):
            raise MapFormatError(f"{source}: crosswalk references unknown light {li}")
    return SceneMap(layers, tuple(lights))


def load_map(path) -> SceneMap:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_map(doc, str(path))


def dump_map(scene_map: SceneMap) -> dict:
    layers = {}
    for lt in MAP_LAYERS:
        if lt not in scene_map.layers:
            continue
        key = "polygon" if lt in POLYGON_LAYERS else "polyline"
        layers[lt.value] = [{key: el.geometry.tolist(), "attrs": dict(el.attrs)}
                            for el in scene_map.layers[lt].elements]
    return {
        "layers": layers,
        "traffic_lights": [{"position": [tl.position.x, tl.position.y], "lane": tl.lane}
                           for tl in scene_map.traffic_lights],
    }


def save_map(scene_map: SceneMap, path) -> None:
    Path(path).write_text(json.dumps(dump_map(scene_map), indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# track logs


def read_track_log(path) -> list[ActorState]:
    states = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                states.append(ActorState.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MapFormatError(f"{path}: line {lineno}: {exc}") from None
    return states


def write_track_log(states: Iterable[ActorState], path) -> None:
    with open(path, "w") as fh:
        for s in states:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


def read_light_log(path) -> dict:
    """Return ``{step_index: {light_index: state}}``."""
    out: dict = defaultdict(dict)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[step_index(float(rec["t"]))][int(rec["light"])] = LightState(rec["state"]).value
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MapFormatError(f"{path}: line {lineno}: {exc}") from None
    return dict(out)


def write_light_log(records: Iterable[tuple[float, int, str]], path) -> None:
    with open(path, "w") as fh:
        for t, light, state in records:
            fh.write(json.dumps({"light": light, "state": state, "t": round(t, 6)}, sort_keys=True) + "\n")


def step_index(t: float, dt: float = DT) -> int:
    return int(round(t / dt))


def examples_from_states(
    states: Sequence[ActorState],
    horizon: int,
    scene_map: SceneMap | None = None,
    lights: Mapping | None = None,
    dt: float = DT,
    stride: int = 1,
    history: int = HISTORY_STEPS,
) -> tuple[list[Example], int]:
    """Sliding-window extraction; returns ``(examples, skipped_windows)``.

    A window at step ``j`` needs observations at ``j+1 .. j+horizon`` with no gaps.
    Windows broken by a missing timestep are skipped and counted.
    """
    by_actor: dict = defaultdict(list)
    by_step: dict = defaultdict(list)
    for s in states:
        k = step_index(s.timestamp, dt)
        by_actor[s.actor_id].append((k, s))
        by_step[k].append(s)
    n_lights = len(scene_map.traffic_lights) if scene_map is not None else 0
    lights = lights or {}

    examples, skipped = [], 0
    for actor_id in sorted(by_actor):
        track = sorted(by_actor[actor_id], key=lambda kv: kv[0])
        steps = np.array([k for k, _ in track])
        if len(steps) > 1 and np.any(np.diff(steps) <= 0):
            raise MapFormatError(f"track {actor_id}: timestamps not strictly increasing")
        # run[i]: length of the contiguous run ending at i
        run = np.ones(len(track), dtype=int)
        for i in range(1, len(track)):
            if steps[i] == steps[i - 1] + 1:
                run[i] = run[i - 1] + 1
        for i in range(0, len(track) - horizon):
            if (steps[i] - steps[0]) % stride:
                continue
            end = i + horizon
            if steps[end] - steps[i] != horizon:
                skipped += 1
                continue
            target = track[i][1]
            future = np.array([track[i + m][1].xy for m in range(1, horizon + 1)])
            gt = world_to_actor_xy(future, target.xy, target.heading)
            n_hist = min(run[i] - 1, history)
            hist = tuple(track[m][1] for m in range(i - n_hist, i))
            step_lights = lights.get(int(steps[i]), {})
            light_states = tuple(step_lights.get(li, LightState.UNKNOWN.value) for li in range(n_lights))
            examples.append(Example(
                target=target,
                context=tuple(by_step[int(steps[i])]),
                scene_map=scene_map,
                ground_truth=gt,
                history=hist,
                light_states=light_states,
            ))
    if skipped:
        logger.warning("skipped %d windows broken by track gaps", skipped)
    return examples, skipped


def load_tracks(path, horizon: int, scene_map: SceneMap | None = None, lights_path=None,
                dt: float = DT, stride: int = 1) -> list[Example]:
    """Load a track log and cut it into examples with ``horizon`` future steps."""
    states = read_track_log(path)
    lights = read_light_log(lights_path) if lights_path else None
    examples, skipped = examples_from_states(states, horizon, scene_map, lights, dt, stride)
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} windows with missing timesteps", stacklevel=2)
    return examples
