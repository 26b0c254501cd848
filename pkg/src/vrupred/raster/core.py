"""Bird's-eye-view rasterization of a scene around one target actor."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..geom import ActorFrame, normalize_angle, oriented_box, target_placement, world_to_pixel_xy
from ..scene import ActorState, LayerType, LightState, SceneMap
from .colors import ColorTable, lane_color
from .draw import draw_circle, draw_polyline, fill_polygon

COLOR_MODES = ("manual_rgb", "multichannel_binary")

# Binary channels, in paint order. Crosswalks and lights are split by state so
# that the learned-color input still sees traffic-control information.
CHANNELS = (
    "road_polygon",
    "driveway",
    "crosswalk",
    "crosswalk_inactive",
    "lane_line",
    "light_red",
    "light_yellow",
    "light_green",
    "light_unknown",
    "actor_box",
    "target_actor_box",
)

LIGHT_RADIUS_M = 1.0
MIN_LIGHT_RADIUS_PX = 2.0


@dataclass(frozen=True)
class RasterConfig:
    n: int = 300
    resolution: float = 0.2
    rotated: bool = True
    encode_lane_heading: bool = True
    encode_traffic_lights: bool = True
    color_mode: str = "manual_rgb"

    def __post_init__(self):
        if int(self.n) != self.n or self.n <= 0:
            raise ValueError(f"raster size must be a positive integer, got {self.n}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.color_mode not in COLOR_MODES:
            raise ValueError(f"color_mode must be one of {COLOR_MODES}, got {self.color_mode!r}")
        w, h = self.target_placement
        if not (0 <= w < self.n and 0 <= h < self.n):
            raise ValueError("target placement falls outside the image")

    @property
    def target_placement(self) -> tuple[int, int]:
        return target_placement(self.n, self.rotated)

    @property
    def channels(self) -> int:
        return 3 if self.color_mode == "manual_rgb" else len(CHANNELS)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RasterImage:
    """``data[h, w, c]`` with row 0 at the bottom of the image."""

    data: np.ndarray
    config: RasterConfig
    channel_names: tuple[str, ...] = field(default=("r", "g", "b"))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def channel(self, name: str) -> np.ndarray:
        return self.data[..., self.channel_names.index(name)]

    def save_png(self, path) -> list[Path]:
        """PNG export (top row first). Multichannel images write one file per channel."""
        from PIL import Image

        path = Path(path)
        if self.config.color_mode == "manual_rgb":
            Image.fromarray(np.ascontiguousarray(self.data[::-1])).save(path)
            return [path]
        written = []
        for i, name in enumerate(self.channel_names):
            p = path.with_name(f"{path.stem}_{name}{path.suffix or '.png'}")
            Image.fromarray(np.ascontiguousarray(self.data[::-1, :, i] * 255)).save(p)
            written.append(p)
        return written


def _crosswalk_inactive(attrs: Mapping, light_states: Sequence[str]) -> bool:
    if not attrs.get("active", True):
        return True
    li = attrs.get("light")
    return li is not None and li < len(light_states) and light_states[li] == LightState.GREEN.value


def _in_view(px: np.ndarray, n: int, margin: float) -> bool:
    lo, hi = px.min(axis=0), px.max(axis=0)
    return bool(hi[0] >= -margin and hi[1] >= -margin and lo[0] < n + margin and lo[1] < n + margin)


def _primitives(scene_map, actors, target, cfg, light_states, table):
    """Yield ``(channel, kind, geometry_px, color, extra)`` in paint order."""
    frame = ActorFrame(target.pose.position, target.heading)
    n = cfg.n

    def px(points):
        return world_to_pixel_xy(points, frame, cfg)

    if scene_map is not None:
        for lt in (LayerType.ROAD_POLYGON, LayerType.DRIVEWAY):
            color = getattr(table, lt.value)
            for el in scene_map.layer(lt):
                poly = px(el.geometry)
                if _in_view(poly, n, 1):
                    yield lt.value, "polygon", poly, color, None
        for el in scene_map.layer(LayerType.CROSSWALK):
            poly = px(el.geometry)
            if not _in_view(poly, n, 1):
                continue
            if cfg.encode_traffic_lights and _crosswalk_inactive(el.attrs, light_states):
                yield "crosswalk_inactive", "polygon", poly, table.crosswalk_inactive, None
            else:
                yield "crosswalk", "polygon", poly, table.crosswalk, None
        for el in scene_map.layer(LayerType.LANE_LINE):
            line = px(el.geometry)
            if not _in_view(line, n, 1):
                continue
            dirs = el.segment_directions()
            if cfg.rotated:
                dirs = dirs - target.heading
            colors = [lane_color(float(normalize_angle(d)), cfg.encode_lane_heading, table) for d in dirs]
            yield "lane_line", "polyline", line, colors, None
        if cfg.encode_traffic_lights:
            radius = max(MIN_LIGHT_RADIUS_PX, LIGHT_RADIUS_M / cfg.resolution)
            for li, light in enumerate(scene_map.traffic_lights):
                state = light_states[li] if li < len(light_states) else LightState.UNKNOWN.value
                center = px(light.position.as_array())
                if _in_view(center[None], n, radius + 1):
                    yield f"light_{state}", "circle", center, table.light(state), radius

    for actor in actors:
        if actor.actor_id == target.actor_id:
            continue
        box = px(oriented_box(actor.xy, actor.heading, *actor.bbox))
        if _in_view(box, n, 1):
            yield "actor_box", "polygon", box, table.actor_box, None
    box = px(oriented_box(target.xy, target.heading, *target.bbox))
    yield "target_actor_box", "polygon", box, table.target_actor_box, None


def _draw(img, kind, geom, value, extra):
    if kind == "polygon":
        fill_polygon(img, geom, value)
    elif kind == "polyline":
        draw_polyline(img, geom, value, width=1)
    else:
        draw_circle(img, geom, extra, value)


def _check_target(actors, target):
    if target is None or not any(a.actor_id == target.actor_id for a in actors):
        raise ValueError("target actor is not among the provided actors")


def rasterize(scene_map: SceneMap | None, actors: Sequence[ActorState], target: ActorState,
              cfg: RasterConfig, light_states: Sequence[str] = (),
              table: ColorTable = ColorTable()) -> RasterImage:
    """Paint the scene as an RGB raster; later layers overwrite earlier ones."""
    _check_target(actors, target)
    img = np.empty((cfg.n, cfg.n, 3), dtype=np.uint8)
    img[...] = table.background
    for _, kind, geom, color, extra in _primitives(scene_map, actors, target, cfg, light_states, table):
        value = [np.array(c, np.uint8) for c in color] if isinstance(color, list) else np.array(color, np.uint8)
        _draw(img, kind, geom, value, extra)
    rgb_cfg = cfg if cfg.color_mode == "manual_rgb" else _replace_mode(cfg, "manual_rgb")
    return RasterImage(img, rgb_cfg)


def rasterize_multichannel(scene_map: SceneMap | None, actors: Sequence[ActorState], target: ActorState,
                           cfg: RasterConfig, light_states: Sequence[str] = (),
                           table: ColorTable = ColorTable()) -> RasterImage:
    """One independent binary channel per layer (no occlusion between channels)."""
    _check_target(actors, target)
    img = np.zeros((cfg.n, cfg.n, len(CHANNELS)), dtype=np.uint8)
    for channel, kind, geom, _, extra in _primitives(scene_map, actors, target, cfg, light_states, table):
        plane = img[..., CHANNELS.index(channel)]
        value = [1] * (len(geom) - 1) if kind == "polyline" else 1
        _draw(plane, kind, geom, value, extra)
    mc_cfg = cfg if cfg.color_mode == "multichannel_binary" else _replace_mode(cfg, "multichannel_binary")
    return RasterImage(img, mc_cfg, CHANNELS)


def render(example, cfg: RasterConfig, table: ColorTable = ColorTable()) -> RasterImage:
    """Rasterize an :class:`~vrupred.scene.Example` in the configured color mode."""
    fn = rasterize if cfg.color_mode == "manual_rgb" else rasterize_multichannel
    return fn(example.scene_map, example.context, example.target, cfg, example.light_states, table)


def _replace_mode(cfg: RasterConfig, mode: str) -> RasterConfig:
    d = cfg.to_dict()
    d["color_mode"] = mode
    return RasterConfig(**d)


def coverage_window(cfg: RasterConfig) -> dict:
    """Extent (meters) of the actor-frame region that lands inside the image."""
    w0, h0 = cfg.target_placement
    r = cfg.resolution
    return {
        "ahead": (cfg.n - h0) * r,
        "behind": h0 * r,
        "left": w0 * r,
        "right": (cfg.n - w0) * r,
    }


__all__ = [
    "CHANNELS", "RasterConfig", "RasterImage", "rasterize", "rasterize_multichannel", "render",
    "coverage_window",
]
