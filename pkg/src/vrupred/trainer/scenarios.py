"""Scripted actors on a demo four-way intersection.

Each episode occupies its own block of time, so one target actor is on the
map at a time and the traffic-light program can be scripted per episode.
Geometry is defined for the eastbound approach and rotated in 90 degree steps
for the other three; traffic is right-hand.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..baseline import UkfState, track
from ..geom import Point2, Pose, normalize_angle
from ..scene import DT, ActorState, ActorType, LightState, parse_map, save_map, write_light_log, write_track_log

APPROACHES = ("EB", "NB", "WB", "SB")  # light i sits on approach i's stop line
HALF_ROAD = 7.0
LANE_OFFSET = 3.5
STOP_LINE = 13.0
ROAD_END = 60.0
SIDEWALK = 9.0
CROSSWALK = (9.0, 12.0)
RIGHT_RADIUS = STOP_LINE - LANE_OFFSET
LEFT_RADIUS = STOP_LINE + LANE_OFFSET
BRAKE = 2.5
BIKE_ACCEL = 1.5
WALK_DECEL = 2.0
WALK_ACCEL = 1.0

BBOX = {
    ActorType.PEDESTRIAN: (0.6, 0.6),
    ActorType.BICYCLIST: (1.8, 0.6),
    ActorType.VEHICLE: (4.5, 1.9),
}

GREEN, RED, YELLOW = LightState.GREEN.value, LightState.RED.value, LightState.YELLOW.value


def _rot(p, k: int):
    """Rotate by ``k`` quarter turns counter-clockwise (exact for integer k)."""
    x, y = p
    for _ in range(k % 4):
        x, y = -y, x
    return (x, y)


# ---------------------------------------------------------------------------
# paths


class Route:
    """Turtle-style path of straight lines and circular arcs."""

    def __init__(self, start, heading: float):
        self.start = (float(start[0]), float(start[1]))
        self.heading = float(heading)
        self._segs: list[tuple] = []  # (kind, length, radius_signed, start_xy, start_heading)
        self._end = (self.start, self.heading)
        self.length = 0.0

    def line(self, length: float) -> "Route":
        (x, y), th = self._end
        self._segs.append(("line", float(length), 0.0, (x, y), th))
        self._end = ((x + length * math.cos(th), y + length * math.sin(th)), th)
        self.length += length
        return self

    def arc(self, radius: float, angle: float) -> "Route":
        """Turn through ``angle`` radians (positive = left) on a circle of ``radius``."""
        (x, y), th = self._end
        r = math.copysign(radius, angle)
        length = abs(angle) * radius
        self._segs.append(("arc", length, r, (x, y), th))
        cx, cy = x - r * math.sin(th), y + r * math.cos(th)
        th1 = th + angle
        self._end = ((cx + r * math.sin(th1), cy - r * math.cos(th1)), th1)
        self.length += length
        return self

    def pose(self, s: float) -> tuple[float, float, float, float]:
        """``(x, y, heading, curvature)`` at arc length ``s``; straight extrapolation past the end."""
        if not self._segs:
            raise ValueError("empty path")
        for kind, length, r, (x, y), th in self._segs:
            if s <= length:
                if kind == "line":
                    return x + s * math.cos(th), y + s * math.sin(th), th, 0.0
                cx, cy = x - r * math.sin(th), y + r * math.cos(th)
                th1 = th + s / r
                return cx + r * math.sin(th1), cy - r * math.cos(th1), th1, 1.0 / r
            s -= length
        (ex, ey), eth = self._end
        return ex + s * math.cos(eth), ey + s * math.sin(eth), eth, 0.0

    def sample(self, step: float = 1.0) -> np.ndarray:
        n = max(int(math.ceil(self.length / step)), 1)
        return np.array([self.pose(self.length * i / n)[:2] for i in range(n + 1)])


def approach_path(k: int, start_offset: float, turn: str = "straight", exit_length: float = 60.0) -> Route:
    """Route entering on approach ``k``, ``start_offset`` meters before its stop line."""
    x0, y0 = _rot((-STOP_LINE - start_offset, -LANE_OFFSET), k)
    p = Route((x0, y0), k * math.pi / 2).line(start_offset)
    if turn == "straight":
        p.line(2 * STOP_LINE)
    elif turn == "right":
        p.arc(RIGHT_RADIUS, -math.pi / 2)
    elif turn == "left":
        p.arc(LEFT_RADIUS, math.pi / 2)
    else:
        raise ValueError(f"unknown turn {turn!r}")
    return p.line(exit_length)


# ---------------------------------------------------------------------------
# speed profiles: t -> (s, v, a)


@dataclass(frozen=True)
class ConstantSpeed:
    v: float

    def __call__(self, t: float):
        return self.v * t, self.v, 0.0


@dataclass(frozen=True)
class StopAndGo:
    """Cruise at ``v0``, brake at ``decel`` to stop at ``s_stop``, wait until ``t_go``, accelerate back."""

    v0: float
    s_stop: float
    t_go: float
    decel: float = BRAKE
    accel: float = BIKE_ACCEL

    @property
    def t_brake(self) -> float:
        return max(self.s_stop - self.v0 ** 2 / (2 * self.decel), 0.0) / self.v0

    @property
    def t_stop(self) -> float:
        return self.t_brake + self.v0 / self.decel

    def __call__(self, t: float):
        v0, tb, ts = self.v0, self.t_brake, self.t_stop
        if t <= tb:
            return v0 * t, v0, 0.0
        if t <= ts:
            u = t - tb
            return v0 * tb + v0 * u - 0.5 * self.decel * u * u, v0 - self.decel * u, -self.decel
        tg = max(self.t_go, ts)
        if t <= tg:
            return self.s_stop, 0.0, 0.0
        u = t - tg
        ta = v0 / self.accel
        if u <= ta:
            return self.s_stop + 0.5 * self.accel * u * u, self.accel * u, self.accel
        return self.s_stop + 0.5 * v0 * ta + v0 * (u - ta), v0, 0.0


# ---------------------------------------------------------------------------
# map


def _lane(lane_id: str, pts) -> dict:
    pts = np.asarray(pts, dtype=float)
    d = np.diff(pts, axis=0)
    dirs = [float(normalize_angle(math.atan2(dy, dx))) for dx, dy in d]
    return {"polyline": pts.round(6).tolist(), "attrs": {"id": lane_id, "direction": dirs}}


def demo_map_doc() -> dict:
    """The intersection as a map document (see :func:`vrupred.scene.parse_map`)."""
    h, e = HALF_ROAD, ROAD_END
    road = [(-e, -h), (-h, -h), (-h, -e), (h, -e), (h, -h), (e, -h), (e, h), (h, h), (h, e), (-h, e), (-h, h), (-e, h)]
    lanes, crosswalks, lights = [], [], []
    for k, name in enumerate(APPROACHES):
        rot = lambda pts: [_rot(p, k) for p in pts]  # noqa: E731
        lanes.append(_lane(f"{name}_in", rot([(-e, -LANE_OFFSET), (-STOP_LINE, -LANE_OFFSET)])))
        lanes.append(_lane(f"{name}_out", rot([(STOP_LINE, -LANE_OFFSET), (e, -LANE_OFFSET)])))
        for turn in ("straight", "right", "left"):
            p = approach_path(k, 0.0, turn, exit_length=0.0)
            lanes.append(_lane(f"{name}_{turn}", p.sample(2.0)))
        # crosswalk on the far side of the intersection, crossing the road this approach drives on
        x0, x1 = CROSSWALK
        crosswalks.append({"polygon": rot([(x0, -h), (x1, -h), (x1, h), (x0, h)]),
                           "attrs": {"active": True, "light": (k + 2) % 4}})
        lights.append({"position": list(_rot((-STOP_LINE, -LANE_OFFSET), k)), "lane": f"{name}_in"})
    driveway = [(30.0, h), (34.0, h), (34.0, 20.0), (30.0, 20.0)]
    return {
        "layers": {
            "road_polygon": [{"polygon": [list(p) for p in road], "attrs": {}}],
            "driveway": [{"polygon": [list(p) for p in driveway], "attrs": {}}],
            "crosswalk": [{"polygon": [list(p) for p in c["polygon"]], "attrs": c["attrs"]} for c in crosswalks],
            "lane_line": lanes,
        },
        "traffic_lights": lights,
    }


def demo_map():
    return parse_map(demo_map_doc(), "<demo map>")


def lights_for_green(approach: int, green: bool) -> tuple[str, ...]:
    """Light states when ``approach``'s axis is green (or red); the crossing axis gets the opposite."""
    axis = approach % 2
    return tuple(GREEN if ((i % 2 == axis) == green) else RED for i in range(4))


# ---------------------------------------------------------------------------
# episodes


@dataclass
class ScenarioSpec:
    straight_walkers: int = 0
    crossing_pedestrians: int = 0
    turning_bicyclists: int = 0
    light_pairs: int = 0
    vehicles: int = 0
    noise_std: float = 0.0
    episode_seconds: float = 14.0
    gap_seconds: float = 2.0
    dt: float = DT

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Episode:
    actor_id: str
    actor_type: ActorType
    path: Route
    profile: object
    lights: list  # [(t_start, light states)] sorted by time
    tags: tuple = ()


@dataclass
class Simulation:
    scene_map: object
    states: list
    light_records: list  # (t, light, state)
    tags: dict  # actor_id -> tags
    spec: ScenarioSpec


def _episodes(spec: ScenarioSpec, rng: np.random.Generator) -> list[Episode]:
    eps = []
    dur = spec.episode_seconds
    for i in range(spec.straight_walkers):
        k = int(rng.integers(4))
        side = float(rng.choice([-1.0, 1.0]))
        v = float(rng.uniform(1.0, 1.8))
        x0 = float(rng.uniform(-45.0, -5.0))
        start = _rot((x0, side * SIDEWALK), k)
        heading = k * math.pi / 2
        path = Route(start, heading).line(200.0)
        eps.append(Episode(f"walker-{i:04d}", ActorType.PEDESTRIAN, path, ConstantSpeed(v),
                           [(0.0, lights_for_green(k, bool(rng.integers(2))))], ("straight",)))
    for i in range(spec.crossing_pedestrians):
        k = int(rng.integers(4))
        v = float(rng.uniform(1.0, 1.8))
        cx = float(np.mean(CROSSWALK))
        lead = float(rng.uniform(2.0, 8.0))
        start = _rot((cx, -HALF_ROAD - 0.5 - lead), k)
        path = Route(start, k * math.pi / 2 + math.pi / 2).line(200.0)
        # the crossed road carries approach k's axis; its light turns red after a random delay
        t_change = float(rng.uniform(0.0, 6.0))
        t_go = t_change + 3.0
        lights = [(0.0, lights_for_green(k, True)), (t_change, _yellow(k)), (t_go, lights_for_green(k, False))]
        profile = StopAndGo(v, lead, t_go, WALK_DECEL, WALK_ACCEL)
        if t_go <= profile.t_brake:
            profile = ConstantSpeed(v)
        eps.append(Episode(f"crosser-{i:04d}", ActorType.PEDESTRIAN, path, profile, lights, ("crossing",)))
    for i in range(spec.turning_bicyclists):
        k = int(rng.integers(4))
        turn = str(rng.choice(["left", "right"]))
        v = float(rng.uniform(3.0, 7.0))
        d = float(rng.uniform(15.0, 30.0))
        path = approach_path(k, d, turn)
        eps.append(Episode(f"turn_bike-{i:04d}", ActorType.BICYCLIST, path, ConstantSpeed(v),
                           [(0.0, lights_for_green(k, True))], ("curved", turn)))
    for i in range(spec.light_pairs):
        k = int(rng.integers(4))
        v = float(rng.uniform(3.0, 5.5))
        d = float(rng.uniform(20.0, 35.0))
        wait = float(rng.uniform(1.0, 4.0))
        path = approach_path(k, d, "straight")
        red = StopAndGo(v, d, 0.0)
        red = StopAndGo(v, d, red.t_stop + wait)
        eps.append(Episode(f"red_bike-{i:04d}", ActorType.BICYCLIST, path, red,
                           [(0.0, lights_for_green(k, False)), (red.t_go, lights_for_green(k, True))],
                           ("stop_at_red",)))
        eps.append(Episode(f"green_bike-{i:04d}", ActorType.BICYCLIST, path, ConstantSpeed(v),
                           [(0.0, lights_for_green(k, True))], ("go_at_green",)))
    for i in range(spec.vehicles):
        k = int(rng.integers(4))
        turn = str(rng.choice(["straight", "left", "right"]))
        v = float(rng.uniform(8.0, 12.0))
        d = float(rng.uniform(20.0, 45.0))
        path = approach_path(k, d, turn, exit_length=150.0)
        eps.append(Episode(f"vehicle-{i:04d}", ActorType.VEHICLE, path, ConstantSpeed(v),
                           [(0.0, lights_for_green(k, True))], ("vehicle", turn)))
    return eps


def _yellow(k: int) -> tuple[str, ...]:
    axis = k % 2
    return tuple(YELLOW if i % 2 == axis else RED for i in range(4))


def _light_at(program, t: float):
    states = program[0][1]
    for t0, s in program:
        if t + 1e-9 >= t0:
            states = s
    return states


def simulate(spec: ScenarioSpec, seed: int = 0) -> Simulation:
    """Generate every episode in time order. All randomness comes from ``seed``."""
    rng = np.random.default_rng(seed)
    episodes = _episodes(spec, rng)
    dt = spec.dt
    n_steps = int(round(spec.episode_seconds / dt))
    block = n_steps + int(round(spec.gap_seconds / dt))
    states, light_records, tags = [], [], {}
    for e_idx, ep in enumerate(episodes):
        base = e_idx * block
        tags[ep.actor_id] = ep.tags
        raw = []
        for k in range(n_steps):
            t_rel = k * dt
            s, v, a = ep.profile(t_rel)
            x, y, th, kappa = ep.path.pose(s)
            raw.append((x, y, float(normalize_angle(th)), v, a, kappa * v))
            t_abs = round((base + k) * dt, 6)
            for li, st in enumerate(_light_at(ep.lights, t_rel)):
                light_records.append((t_abs, li, st))
        if spec.noise_std > 0:
            raw = _noisy(raw, spec.noise_std, dt, rng)
        for k, (x, y, th, v, a, hcr) in enumerate(raw):
            states.append(ActorState(
                actor_id=ep.actor_id,
                timestamp=round((base + k) * dt, 6),
                pose=Pose(Point2(round(x, 6), round(y, 6)), round(th, 9)),
                velocity=round(v, 6),
                acceleration=round(a, 6),
                heading_change_rate=round(hcr, 6),
                bbox=BBOX[ep.actor_type],
                actor_type=ep.actor_type,
            ))
    return Simulation(demo_map(), states, light_records, tags, spec)


def _noisy(raw, std: float, dt: float, rng: np.random.Generator):
    """Perturb positions and headings, then re-estimate the kinematics with the UKF."""
    arr = np.array(raw)
    obs = arr[:, :3].copy()
    obs[:, :2] += rng.normal(0.0, std, size=(len(arr), 2))
    obs[:, 2] = normalize_angle(obs[:, 2] + rng.normal(0.0, std / 2.0, size=len(arr)))
    x0 = arr[0]
    init = UkfState(np.array([obs[0, 0], obs[0, 1], x0[3], obs[0, 2], 0.0, 0.0]),
                    np.diag([std ** 2 + 1e-4, std ** 2 + 1e-4, 1.0, 0.1, 0.1, 1.0]))
    filt = track(obs, init, dt)
    return [(o[0], o[1], o[2], f.mean[2], f.mean[5], f.mean[4]) for o, f in zip(obs, filt)]


@dataclass
class ScenarioFiles:
    map: Path
    tracks: Path
    lights: Path
    spec: Path
    tags: Path


def generate_scenarios(spec: ScenarioSpec, seed: int, out_dir) -> ScenarioFiles:
    """Write ``map.json``, ``tracks.jsonl``, ``lights.jsonl``, ``scenario.json`` and ``tags.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = simulate(spec, seed)
    files = ScenarioFiles(out / "map.json", out / "tracks.jsonl", out / "lights.jsonl",
                          out / "scenario.json", out / "tags.json")
    save_map(sim.scene_map, files.map)
    write_track_log(sim.states, files.tracks)
    write_light_log(sim.light_records, files.lights)
    files.spec.write_text(json.dumps({"seed": seed, **spec.to_dict()}, indent=2, sort_keys=True) + "\n")
    files.tags.write_text(json.dumps({k: list(v) for k, v in sim.tags.items()}, indent=1, sort_keys=True) + "\n")
    return files
