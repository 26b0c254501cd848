"""Displacement metrics and tabular reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..scene import DT


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.shape[-1] != 2:
        raise ValueError(f"trajectory shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def ade(pred, gt) -> float:
    """Mean Euclidean distance over all steps (and examples, for batched input)."""
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def ade_per_example(pred, gt) -> np.ndarray:
    pred, gt = _check_pair(pred, gt)
    d = np.linalg.norm(pred - gt, axis=-1)
    return d.reshape(-1, d.shape[-1]).mean(axis=-1)


def step_for(t_seconds: float, dt: float = DT) -> int:
    return int(round(t_seconds / dt))


def displacement_at(pred, gt, t_seconds: float, dt: float = DT) -> float:
    """Distance at step ``round(t / dt)`` (1-based: step 1 is ``dt`` after the present).

    Averaged over examples for batched input. Raises if the step lies beyond the horizon.
    """
    pred, gt = _check_pair(pred, gt)
    step = step_for(t_seconds, dt)
    horizon = pred.shape[-2]
    if not 1 <= step <= horizon:
        raise ValueError(f"t={t_seconds}s is step {step}, outside horizon 1..{horizon}")
    return float(np.linalg.norm(pred[..., step - 1, :] - gt[..., step - 1, :], axis=-1).mean())


@dataclass
class MetricsReport:
    """One row per (configuration, group). ``@5s`` is NaN when the horizon is shorter."""

    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("config", "group", "count", "ade", "at_1s", "at_5s")

    def add(self, config: str, group: str, pred, gt, dt: float = DT) -> dict:
        pred, gt = _check_pair(pred, gt)
        row = {"config": config, "group": group, "count": int(len(pred))}
        if len(pred) == 0:
            row.update(ade=math.nan, at_1s=math.nan, at_5s=math.nan)
        else:
            row["ade"] = ade(pred, gt)
            for key, t in (("at_1s", 1.0), ("at_5s", 5.0)):
                row[key] = displacement_at(pred, gt, t, dt) if step_for(t, dt) <= pred.shape[-2] else math.nan
        self.rows.append(row)
        return row

    def extend(self, other: "MetricsReport") -> "MetricsReport":
        self.rows.extend(other.rows)
        return self

    def get(self, config: str, group: str = "all") -> dict:
        for r in self.rows:
            if r["config"] == config and r["group"] == group:
                return r
        raise KeyError((config, group))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in self.COLUMNS})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def to_table(self) -> str:
        header = ("Config", "Group", "N", "ADE (m)", "@1s (m)", "@5s (m)")
        fmt = lambda v: "n/a" if isinstance(v, float) and math.isnan(v) else f"{v:.3f}"  # noqa: E731
        body = [(r["config"], r["group"], str(r["count"]), fmt(r["ade"]), fmt(r["at_1s"]), fmt(r["at_5s"]))
                for r in self.rows]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        line = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths))  # noqa: E731
        return "\n".join([line(header), line(tuple("-" * w for w in widths))] + [line(b) for b in body])
