"""Parameter initializers."""
from __future__ import annotations

import numpy as np


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within ``bound`` standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return (z * std).astype(np.float32)


def fan_in(kind: str, shape) -> int:
    if kind in ("conv2d", "conv1x1"):
        k, _, cin, _ = shape
        return k * k * cin
    if kind == "dwconv2d":
        k, _, _ = shape
        return k * k
    if kind == "fc":
        return shape[0]
    raise ValueError(f"no fan-in rule for {kind}")


def he_normal(rng: np.random.Generator, kind: str, shape) -> np.ndarray:
    """Truncated normal with std ``sqrt(2 / fan_in)``."""
    return truncated_normal(rng, shape, float(np.sqrt(2.0 / fan_in(kind, shape))))
