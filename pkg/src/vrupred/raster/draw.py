"""Deterministic rendering primitives on ``[h, w]``-indexed arrays (row 0 = bottom).

Coverage convention: pixel ``(i, j)`` is painted when the lattice point
``(w=i, h=j)`` lies inside the shape, with half-open edges (left/bottom edges
included, right/top edges excluded). This matches the floor convention used by
:func:`vrupred.geom.world_to_pixel`.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from ..geom import PIXEL_SNAP

logger = logging.getLogger(__name__)


def _paint(img: np.ndarray, hs: np.ndarray, ws: np.ndarray, value) -> int:
    keep = (hs >= 0) & (hs < img.shape[0]) & (ws >= 0) & (ws < img.shape[1])
    img[hs[keep], ws[keep]] = value
    return int(keep.sum())


def polygon_spans(poly) -> list[tuple[int, int, int]]:
    """Scanline spans ``(row, w_start, w_stop)`` covering a polygon (even-odd rule)."""
    pts = np.asarray(poly, dtype=float)
    nxt = np.roll(pts, -1, axis=0)
    rows_all, xs_all = [], []
    for (x0, y0), (x1, y1) in zip(pts, nxt):
        if y0 == y1:
            continue
        ylo, yhi = min(y0, y1), max(y0, y1)
        rows = np.arange(math.ceil(ylo - PIXEL_SNAP), math.ceil(yhi - PIXEL_SNAP))
        if rows.size == 0:
            continue
        xs = x0 + (rows - y0) * (x1 - x0) / (y1 - y0)
        rows_all.append(rows)
        xs_all.append(xs)
    if not rows_all:
        return []
    rows = np.concatenate(rows_all)
    xs = np.concatenate(xs_all)
    order = np.lexsort((xs, rows))
    rows, xs = rows[order], xs[order]
    spans = []
    i = 0
    while i + 1 < len(rows):
        if rows[i] != rows[i + 1]:
            i += 1
            continue
        start = math.ceil(xs[i] - PIXEL_SNAP)
        stop = math.ceil(xs[i + 1] - PIXEL_SNAP)
        if stop > start:
            spans.append((int(rows[i]), start, stop))
        i += 2
    return spans


def fill_polygon(img: np.ndarray, poly, value) -> int:
    """Scanline-fill ``poly`` (``(k, 2)`` pixel coords as ``(w, h)``); returns pixels painted.

    Polygons with fewer than three distinct vertices are skipped with a warning.
    """
    pts = np.asarray(poly, dtype=float)
    if len(np.unique(pts, axis=0)) < 3:
        logger.warning("skipping degenerate polygon with %d distinct vertices",
                       len(np.unique(pts, axis=0)))
        return 0
    n_h, n_w = img.shape[:2]
    painted = 0
    for row, start, stop in polygon_spans(pts):
        if not 0 <= row < n_h:
            continue
        start, stop = max(start, 0), min(stop, n_w)
        if stop > start:
            img[row, start:stop] = value
            painted += stop - start
    return painted


def _line_pixels(p0, p1) -> tuple[np.ndarray, np.ndarray]:
    (w0, h0), (w1, h1) = np.floor(np.asarray([p0, p1], dtype=float) + PIXEL_SNAP).astype(np.int64)
    steps = int(max(abs(w1 - w0), abs(h1 - h0)))
    if steps == 0:
        return np.array([h0]), np.array([w0])
    t = np.arange(steps + 1) / steps
    ws = np.floor(w0 + t * (w1 - w0) + 0.5).astype(np.int64)
    hs = np.floor(h0 + t * (h1 - h0) + 0.5).astype(np.int64)
    return hs, ws


def draw_polyline(img: np.ndarray, line, value, width: int = 1) -> int:
    """Draw a polyline ``width`` pixels wide; ``value`` may be one value per segment."""
    pts = np.asarray(line, dtype=float)
    n_seg = len(pts) - 1
    values = value if isinstance(value, list) else [value] * n_seg
    half = (int(width) - 1) // 2
    painted = 0
    for k in range(n_seg):
        hs, ws = _line_pixels(pts[k], pts[k + 1])
        for dh in range(-half, half + 1):
            for dw in range(-half, half + 1):
                painted += _paint(img, hs + dh, ws + dw, values[k])
    return painted


def draw_circle(img: np.ndarray, center, radius: float, value) -> int:
    """Disk of ``radius`` pixels around the pixel containing ``center``."""
    cw, ch = np.floor(np.asarray(center, dtype=float) + PIXEL_SNAP).astype(np.int64)
    r = int(math.floor(radius))
    dh, dw = np.mgrid[-r:r + 1, -r:r + 1]
    inside = dh ** 2 + dw ** 2 <= radius ** 2
    return _paint(img, ch + dh[inside], cw + dw[inside], value)
