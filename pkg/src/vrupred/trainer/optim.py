"""Step-decay learning rate and the Adam optimizer."""
from __future__ import annotations

import math

import numpy as np


def lr_schedule(iteration: int, lr0: float = 1e-4, factor: float = 0.9, steps: int = 20000) -> float:
    """``lr0 * factor ** floor(iteration / steps)``."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return lr0 * factor ** math.floor(iteration / steps)


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float, names=None) -> None:
        """Update ``params[name]`` in place for every name in ``names`` (default: all grads)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in (names if names is not None else grads):
            g = grads[name].astype(np.float32, copy=False)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] = (params[name] - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(np.float32)
