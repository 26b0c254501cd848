"""Dataset assembly, evaluation and ablation harness."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from ..baseline import UKFRollout
from ..net import ExampleFeaturizer, FMNetRegressor, targets
from ..scene import Example, examples_from_states, load_map, read_light_log, read_track_log
from .metrics import MetricsReport
from .scenarios import ScenarioSpec, Simulation, simulate

logger = logging.getLogger(__name__)


def make_examples(sim: Simulation, horizon: int, stride: int = 1) -> list[Example]:
    """Sliding-window examples with scenario tags attached."""
    lights = {}
    for t, li, st in sim.light_records:
        lights.setdefault(int(round(t / sim.spec.dt)), {})[li] = st
    examples, _ = examples_from_states(sim.states, horizon, sim.scene_map, lights, sim.spec.dt, stride)
    return [replace(e, tags=tuple(sim.tags.get(e.target.actor_id, ()))) for e in examples]


def load_scenario_dir(path, horizon: int, stride: int = 1, dt: float = 0.1) -> list[Example]:
    """Examples from a directory written by :func:`generate_scenarios` (``tags.json`` optional)."""
    path = Path(path)
    scene_map = load_map(path / "map.json")
    lights = read_light_log(path / "lights.jsonl") if (path / "lights.jsonl").exists() else None
    tags = json.loads((path / "tags.json").read_text()) if (path / "tags.json").exists() else {}
    examples, _ = examples_from_states(read_track_log(path / "tracks.jsonl"), horizon, scene_map,
                                       lights, dt, stride)
    return [replace(e, tags=tuple(tags.get(e.target.actor_id, ()))) for e in examples]


def split_by_actor(examples: Sequence[Example], seed: int = 0, fractions=(0.8, 0.1, 0.1)):
    """Seeded train/val/test split in which every actor lands in exactly one part."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    ids = sorted({e.target.actor_id for e in examples})
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    part = {}
    for rank, i in enumerate(order):
        part[ids[i]] = 0 if rank < n_train else (1 if rank < n_train + n_val else 2)
    splits = ([], [], [])
    for e in examples:
        splits[part[e.target.actor_id]].append(e)
    return splits


def default_groups(ex: Example) -> list[str]:
    return ["all", ex.actor_type.value] + list(ex.tags)


def evaluate(model, examples: Sequence[Example], name: str = "model",
             groups: Callable[[Example], list[str]] = default_groups, dt: float = 0.1) -> MetricsReport:
    """One report row per group (``all``, actor type, scenario tag)."""
    if len(examples) == 0:
        raise ValueError("no examples to evaluate")
    gt = targets(examples)
    pred = np.asarray(model.predict(list(examples)))
    if pred.shape != gt.shape:
        raise ValueError(f"model predicts {pred.shape[1:]} but examples have {gt.shape[1:]}")
    members: dict[str, list[int]] = {}
    for i, e in enumerate(examples):
        for g in groups(e):
            members.setdefault(g, []).append(i)
    report = MetricsReport()
    for g in sorted(members, key=lambda k: (k != "all", k)):
        idx = members[g]
        report.add(name, g, pred[idx], gt[idx], dt)
    return report


def make_pipeline(featurizer: dict | None = None, regressor: dict | None = None) -> Pipeline:
    feat = ExampleFeaturizer(**(featurizer or {}))
    reg_params = dict(regressor or {})
    reg_params.setdefault("resolution", feat.resolution)
    reg_params.setdefault("rotated", feat.rotated)
    return Pipeline([("features", feat), ("model", FMNetRegressor(**reg_params))])


@dataclass
class AblationConfig:
    name: str
    featurizer: dict = field(default_factory=dict)
    regressor: dict = field(default_factory=dict)


def run_ablation(grid: Sequence[AblationConfig], train: Sequence[Example], test: Sequence[Example],
                 base: Pipeline | None = None, include_ukf: bool = False) -> tuple[MetricsReport, dict]:
    """Train one pipeline per grid entry on ``train`` and evaluate on ``test``.

    Returns the combined report and the fitted pipelines keyed by name.
    """
    report, fitted = MetricsReport(), {}
    y = targets(train)
    if include_ukf:
        report.extend(evaluate(UKFRollout().fit(None, y), test, "ukf"))
    for cfg in grid:
        pipe = make_pipeline(cfg.featurizer, cfg.regressor) if base is None else clone(base)
        if base is not None:
            pipe.set_params(**{f"features__{k}": v for k, v in cfg.featurizer.items()})
            pipe.set_params(**{f"model__{k}": v for k, v in cfg.regressor.items()})
            feat = pipe.named_steps["features"]
            pipe.set_params(model__resolution=feat.resolution, model__rotated=feat.rotated)
        start = time.perf_counter()
        pipe.fit(list(train), y)
        logger.info("%s: trained in %.1fs", cfg.name, time.perf_counter() - start)
        fitted[cfg.name] = pipe
        report.extend(evaluate(pipe, test, cfg.name))
    return report, fitted


@dataclass
class Benchmark:
    train: list
    val: list
    test: list
    simulation: Simulation


BENCHMARK_SPEC = ScenarioSpec(turning_bicyclists=64, light_pairs=32)


def build_benchmark(spec: ScenarioSpec = BENCHMARK_SPEC, seed: int = 0, horizon: int = 30,
                    stride: int = 3) -> Benchmark:
    """Curved-path and red/green-light bicyclist episodes, split 80/10/10 by actor."""
    sim = simulate(spec, seed)
    examples = make_examples(sim, horizon, stride)
    tr, va, te = split_by_actor(examples, seed)
    return Benchmark(tr, va, te, sim)
