"""Mini-batch training of a trajectory graph on the mean-ADE objective."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..tensor import Graph
from .optim import Adam, lr_schedule

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr0: float = 1e-4
    lr_decay: float = 0.9
    lr_decay_steps: int = 20000
    max_iter: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")

    def lr(self, iteration: int) -> float:
        return lr_schedule(iteration, self.lr0, self.lr_decay, self.lr_decay_steps)

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDivergedError(RuntimeError):
    """Non-finite loss; ``diagnostics`` holds the batch ids and gradient norms."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.losses)


def ade_loss(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean Euclidean distance over batch and steps, and its gradient w.r.t. ``pred``.

    The gradient is taken as zero where a predicted point coincides with the ground truth.
    """
    diff = (pred - gt).astype(np.float64)
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    loss = float(dist.mean())
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where(dist[..., None] > 0, diff / safe[..., None], 0.0) / dist.size
    return loss, grad.astype(pred.dtype)


def batch_order(n: int, batch_size: int, iterations: int, seed: int):
    """Index batches from consecutive seeded permutations of ``range(n)``."""
    rng = np.random.default_rng(seed)
    bs = min(batch_size, n)
    perm, pos = rng.permutation(n), 0
    for _ in range(iterations):
        if pos + bs > n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos:pos + bs]
        pos += bs


def train(graph: Graph, raster: np.ndarray, aux: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          checkpoint: Callable[[int], None] | None = None) -> TrainResult:
    """Minimize mean ADE with Adam. ``y`` is ``(N, H, 2)``; the graph outputs ``2H`` values."""
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    if len(raster) != n or len(aux) != n:
        raise ValueError("raster, aux and targets must have the same length")
    out_dim = graph.shape(graph.outputs[0])[0]
    if y.ndim != 3 or y.shape[2] != 2 or 2 * y.shape[1] != out_dim:
        raise ValueError(f"targets must be (N, {out_dim // 2}, 2), got {y.shape}")
    names = graph.trainable_params()
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainResult()
    start = time.perf_counter()
    for it, idx in enumerate(batch_order(n, cfg.batch_size, cfg.max_iter, cfg.seed)):
        trace = graph.run({"raster": raster[idx], "aux": aux[idx]}, training=True)
        out = trace.values[graph.outputs[0]]
        pred = out.reshape(len(idx), -1, 2)
        loss, gpred = ade_loss(pred, y[idx])
        grads = trace.backward(gpred.reshape(out.shape))
        if not np.isfinite(loss):
            norms = {k: float(np.linalg.norm(grads[k])) for k in names}
            raise TrainingDivergedError(
                f"loss became {loss} at iteration {it}",
                {"iteration": it, "batch_ids": idx.tolist(), "grad_norms": norms},
            )
        opt.step(graph.params, grads, cfg.lr(it), names)
        graph.params.update(trace.batch_norm_updates())
        result.losses.append(loss)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            logger.info("iter %d loss %.4f lr %.2e", it + 1, loss, cfg.lr(it))
        if checkpoint is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            checkpoint(it + 1)
    result.seconds = time.perf_counter() - start
    return result
