"""Raster-based motion prediction for vulnerable road users."""

__version__ = "0.1.0"
