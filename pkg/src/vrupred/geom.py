"""Planar geometry and the world / actor / pixel frames used throughout the package.

Conventions
-----------
* World frame: meters, +x east, +y north, headings counter-clockwise from +x.
* Actor frame: origin at the actor's bounding-box centroid, +x forward, +y left.
* Pixel frame: ``(w, h)`` with ``w`` counted from the left edge and ``h`` from the
  bottom edge. Continuous pixel coordinates are floored to integer indices, so a
  point lying exactly on a pixel boundary belongs to the higher-index pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Continuous pixel coordinates within this distance below an integer snap up to
# it before flooring; absorbs rounding in ``d / resolution`` (e.g. 10 / 0.2).
PIXEL_SNAP = 1e-9


def normalize_angle(angle):
    """Wrap an angle (scalar or array) into ``[-pi, pi)``."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point2 coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Pose:
    position: Point2
    heading: float

    def __post_init__(self):
        if not math.isfinite(self.heading):
            raise ValueError("heading must be finite")
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class ActorFrame:
    """Orthonormal frame attached to an actor: forward is +x, left is +y."""

    origin: Point2
    heading: float

    def __post_init__(self):
        if not math.isfinite(self.heading):
            raise ValueError("heading must be finite")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @classmethod
    def from_pose(cls, pose: Pose) -> "ActorFrame":
        return cls(pose.position, pose.heading)


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_actor_xy(points, origin, heading: float) -> np.ndarray:
    """Vectorized world -> actor transform for an ``(..., 2)`` array."""
    pts = np.asarray(points, dtype=float)
    d = pts - np.asarray(origin, dtype=float)
    c, s = math.cos(heading), math.sin(heading)
    out = np.empty_like(d)
    out[..., 0] = c * d[..., 0] + s * d[..., 1]
    out[..., 1] = -s * d[..., 0] + c * d[..., 1]
    return out


def actor_to_world_xy(points, origin, heading: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    c, s = math.cos(heading), math.sin(heading)
    out = np.empty_like(pts)
    out[..., 0] = c * pts[..., 0] - s * pts[..., 1]
    out[..., 1] = s * pts[..., 0] + c * pts[..., 1]
    return out + np.asarray(origin, dtype=float)


def world_to_actor(p: Point2, frame: ActorFrame) -> Point2:
    x, y = world_to_actor_xy(p.as_array(), frame.origin.as_array(), frame.heading)
    return Point2(float(x), float(y))


def actor_to_world(p: Point2, frame: ActorFrame) -> Point2:
    x, y = actor_to_world_xy(p.as_array(), frame.origin.as_array(), frame.heading)
    return Point2(float(x), float(y))


def target_placement(n: int, rotated: bool) -> tuple[int, int]:
    """Pixel ``(w, h)`` of the target centroid; ``(150, 50)`` / ``(150, 150)`` at n=300."""
    return (n // 2, n // 6) if rotated else (n // 2, n // 2)


def world_to_pixel_xy(points, frame: ActorFrame, cfg) -> np.ndarray:
    """Continuous (unfloored) pixel coordinates for world points.

    ``cfg`` needs ``n``, ``resolution`` and ``rotated`` attributes. With a rotated
    raster the target's forward direction points to increasing ``h``; otherwise
    world north does.
    """
    if cfg.resolution <= 0:
        raise ValueError(f"resolution must be positive, got {cfg.resolution}")
    pts = np.asarray(points, dtype=float)
    w0, h0 = target_placement(cfg.n, cfg.rotated)
    if cfg.rotated:
        local = world_to_actor_xy(pts, frame.origin.as_array(), frame.heading)
        fwd, left = local[..., 0], local[..., 1]
        w = w0 - left / cfg.resolution
        h = h0 + fwd / cfg.resolution
    else:
        d = pts - frame.origin.as_array()
        w = w0 + d[..., 0] / cfg.resolution
        h = h0 + d[..., 1] / cfg.resolution
    return np.stack([w, h], axis=-1)


def floor_pixels(coords) -> np.ndarray:
    return np.floor(np.asarray(coords, dtype=float) + PIXEL_SNAP).astype(np.int64)


def world_to_pixel(p: Point2, frame: ActorFrame, cfg) -> tuple[int, int]:
    """Integer pixel ``(w, h)``; may fall outside ``[0, n)`` (callers clip)."""
    w, h = floor_pixels(world_to_pixel_xy(p.as_array(), frame, cfg))
    return int(w), int(h)


def oriented_box(center, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of a length x width rectangle centered at ``center``, counter-clockwise."""
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ _rotation(heading).T + np.asarray(center, dtype=float)
