"""Bird's-eye-view rasterization."""
from .colors import ColorTable, hsv_to_rgb, lane_color
from .core import (CHANNELS, RasterConfig, RasterImage, coverage_window, rasterize,
                   rasterize_multichannel, render)
from .draw import draw_circle, draw_polyline, fill_polygon

__all__ = [
    "CHANNELS", "ColorTable", "RasterConfig", "RasterImage", "coverage_window", "draw_circle",
    "draw_polyline", "fill_polygon", "hsv_to_rgb", "lane_color", "rasterize",
    "rasterize_multichannel", "render",
]
