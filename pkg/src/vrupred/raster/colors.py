"""Manual raster colors and the HSV lane-heading encoding."""
from __future__ import annotations

import colorsys
import math
from dataclasses import astuple, dataclass, fields

RGB = tuple[int, int, int]


def hsv_to_rgb(h: float, s: float, v: float) -> RGB:
    """HSV (hue in degrees) to an 8-bit RGB triple, rounded to nearest."""
    if not 0.0 <= h < 360.0:
        raise ValueError(f"hue must be in [0, 360), got {h}")
    if not (0.0 <= s <= 1.0 and 0.0 <= v <= 1.0):
        raise ValueError(f"saturation and value must be in [0, 1], got s={s}, v={v}")
    r, g, b = colorsys.hsv_to_rgb(h / 360.0, s, v)
    return tuple(int(math.floor(c * 255.0 + 0.5)) for c in (r, g, b))


def is_hue_color(rgb: RGB) -> bool:
    """True if ``rgb`` can be produced by the lane encoding (full saturation and value)."""
    return max(rgb) == 255 and min(rgb) == 0


@dataclass(frozen=True)
class ColorTable:
    """Per-layer colors. None of them is reachable by the lane hue encoding."""

    background: RGB = (0, 0, 0)
    road_polygon: RGB = (64, 64, 64)
    driveway: RGB = (96, 64, 32)
    crosswalk: RGB = (255, 128, 255)
    crosswalk_inactive: RGB = (64, 255, 64)
    lane_line: RGB = (128, 128, 128)
    light_red: RGB = (160, 0, 0)
    light_yellow: RGB = (160, 160, 0)
    light_green: RGB = (0, 160, 0)
    light_unknown: RGB = (160, 160, 160)
    actor_box: RGB = (255, 255, 128)
    target_actor_box: RGB = (255, 32, 32)

    def __post_init__(self):
        colors = astuple(self)
        if len(set(colors)) != len(colors):
            raise ValueError("raster colors must be distinct")
        for f in fields(self):
            if is_hue_color(getattr(self, f.name)):
                raise ValueError(f"{f.name} color collides with the lane hue encoding")

    def light(self, state: str) -> RGB:
        return getattr(self, f"light_{state}")


def lane_color(direction: float, encode_heading: bool = True, table: ColorTable = ColorTable()) -> RGB:
    """Color of a lane segment whose raster-frame direction is ``direction`` radians."""
    if not encode_heading:
        return table.lane_line
    hue = (math.degrees(direction) % 360.0)
    if hue >= 360.0:  # -tiny % 360 can round to 360
        hue = 0.0
    return hsv_to_rgb(hue, 1.0, 1.0)
