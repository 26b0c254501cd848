"""scikit-learn style wrappers: example featurization and the trainable regressor."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..raster import RasterConfig, render
from ..scene import Example
from ..tensor import GraphError, load_checkpoint, save_checkpoint
from .backbone import BackboneConfig
from .model import ModelConfig, build_model

logger = logging.getLogger(__name__)

AUX_PAST_STEPS = 4
AUX_MEAN_KEY = "__aux_mean__"
AUX_STD_KEY = "__aux_std__"


def aux_features(example: Example, past_steps: int = AUX_PAST_STEPS) -> np.ndarray:
    """``(v, a, hcr)`` for the current and ``past_steps`` previous states, then bbox length and width.

    Missing history is filled by repeating the oldest available state.
    """
    states = list(example.history[-past_steps:]) if past_steps else []
    states.append(example.target)
    states = [states[0]] * (past_steps + 1 - len(states)) + states
    kin = [(s.velocity, s.acceleration, s.heading_change_rate) for s in states]
    return np.array([v for row in kin for v in row] + list(example.target.bbox), dtype=np.float32)


def aux_dim(past_steps: int = AUX_PAST_STEPS) -> int:
    return 3 * (past_steps + 1) + 2


@dataclass
class ModelInputs:
    """Batched network inputs: ``raster (N, n, n, C)`` float32 in [0, 1] and raw ``aux (N, A)``."""

    raster: np.ndarray
    aux: np.ndarray

    def __post_init__(self):
        if len(self.raster) != len(self.aux):
            raise ValueError("raster and aux batch sizes differ")

    def __len__(self) -> int:
        return len(self.raster)

    def __getitem__(self, idx) -> "ModelInputs":
        return ModelInputs(self.raster[idx], self.aux[idx])


def targets(examples: Sequence[Example]) -> np.ndarray:
    """Ground-truth trajectories stacked to ``(N, H, 2)``."""
    return np.stack([e.ground_truth for e in examples]).astype(np.float32)


class ExampleFeaturizer(TransformerMixin, BaseEstimator):
    """Rasterize examples and extract their auxiliary kinematic features."""

    def __init__(self, n: int = 64, resolution: float = 0.5, rotated: bool = True,
                 encode_lane_heading: bool = True, encode_traffic_lights: bool = True,
                 color_mode: str = "manual_rgb", past_steps: int = AUX_PAST_STEPS):
        self.n = n
        self.resolution = resolution
        self.rotated = rotated
        self.encode_lane_heading = encode_lane_heading
        self.encode_traffic_lights = encode_traffic_lights
        self.color_mode = color_mode
        self.past_steps = past_steps

    @property
    def raster_config(self) -> RasterConfig:
        return RasterConfig(self.n, self.resolution, self.rotated, self.encode_lane_heading,
                            self.encode_traffic_lights, self.color_mode)

    def fit(self, X, y=None):
        self.raster_config_ = self.raster_config
        self.n_aux_ = aux_dim(self.past_steps)
        return self

    def transform(self, X: Sequence[Example]) -> ModelInputs:
        cfg = self.raster_config
        if len(X) == 0:
            raise ValueError("no examples to transform")
        scale = 1.0 / 255.0 if cfg.color_mode == "manual_rgb" else 1.0
        raster = np.empty((len(X), cfg.n, cfg.n, cfg.channels), dtype=np.float32)
        aux = np.empty((len(X), aux_dim(self.past_steps)), dtype=np.float32)
        for i, ex in enumerate(X):
            if not isinstance(ex, Example):
                raise TypeError(f"expected Example, got {type(ex).__name__}")
            raster[i] = render(ex, cfg).data * scale
            aux[i] = aux_features(ex, self.past_steps)
        return ModelInputs(raster, aux)


def _check_inputs(X) -> ModelInputs:
    if isinstance(X, ModelInputs):
        return X
    if isinstance(X, tuple) and len(X) == 2:
        return ModelInputs(np.asarray(X[0], np.float32), np.asarray(X[1], np.float32))
    raise TypeError("expected ModelInputs or a (raster, aux) tuple; use ExampleFeaturizer on examples")


def _check_targets(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != 3 or y.shape[2] != 2 or len(y) != n:
        raise ValueError(f"targets must be ({n}, H, 2), got {y.shape}")
    if not np.isfinite(y).all():
        raise ValueError("targets contain non-finite values")
    return y


class FMNetRegressor(RegressorMixin, BaseEstimator):
    """Raster + aux feature regressor predicting ``(H, 2)`` actor-frame trajectories.

    The input geometry (raster size and channels, aux width) and horizon are
    taken from the data at :meth:`fit`. Multichannel rasters get a learned
    color layer. Aux features are standardized with training-set statistics,
    which are saved with the weights.
    """

    def __init__(self, fusion: str = "spatial", arch: str = "fmnet", concat_hidden: int = 4096,
                 c_mid: int = 8, batch_size: int = 64, max_iter: int = 1000, lr0: float = 1e-4,
                 lr_decay: float = 0.9, lr_decay_steps: int = 20000, random_state: int = 0,
                 resolution: float = 0.5, rotated: bool = True, warm_start_from=None,
                 warm_start_strict: bool = True, checkpoint_dir=None, checkpoint_every: int = 0):
        self.fusion = fusion
        self.arch = arch
        self.concat_hidden = concat_hidden
        self.c_mid = c_mid
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.lr0 = lr0
        self.lr_decay = lr_decay
        self.lr_decay_steps = lr_decay_steps
        self.random_state = random_state
        self.resolution = resolution
        self.rotated = rotated
        self.warm_start_from = warm_start_from
        self.warm_start_strict = warm_start_strict
        self.checkpoint_dir = checkpoint_dir
        self.checkpoint_every = checkpoint_every

    # -- model construction ---------------------------------------------------

    def _model_config(self, n: int, channels: int, a: int, horizon: int) -> ModelConfig:
        mode = "manual_rgb" if channels == 3 else "multichannel_binary"
        raster = RasterConfig(n=n, resolution=self.resolution, rotated=self.rotated, color_mode=mode)
        bb = BackboneConfig.fmnet(input_size=n) if self.arch == "fmnet" else BackboneConfig.mnv2(input_size=n)
        cfg = ModelConfig(raster=raster, aux_dim=a, horizon=horizon, fusion=self.fusion,
                          learned_colors=(mode != "manual_rgb"), backbone=bb,
                          concat_hidden=self.concat_hidden, c_mid=self.c_mid)
        if mode != "manual_rgb" and channels != raster.channels:
            raise ValueError(f"raster has {channels} channels; expected 3 or {raster.channels}")
        return cfg

    def _standardize(self, aux: np.ndarray) -> np.ndarray:
        return ((aux - self.aux_mean_) / self.aux_std_).astype(np.float32)

    def _initialize(self, X: ModelInputs, horizon: int) -> None:
        n, w, c = X.raster.shape[1:]
        if n != w:
            raise ValueError("rasters must be square")
        self.config_ = self._model_config(n, c, X.aux.shape[1], horizon)
        self.graph_ = build_model(self.config_, seed=self.random_state)
        self.aux_mean_ = X.aux.mean(axis=0).astype(np.float32)
        std = X.aux.std(axis=0)
        self.aux_std_ = np.where(std > 1e-6, std, 1.0).astype(np.float32)
        self.n_features_in_ = X.aux.shape[1]
        self.warm_start_report_ = None
        if self.warm_start_from is not None:
            self.warm_start(self.warm_start_from, strict=self.warm_start_strict)

    def train_config(self):
        from ..trainer.loop import TrainConfig

        return TrainConfig(batch_size=self.batch_size, lr0=self.lr0, lr_decay=self.lr_decay,
                           lr_decay_steps=self.lr_decay_steps, max_iter=self.max_iter,
                           seed=self.random_state, checkpoint_every=self.checkpoint_every)

    # -- estimator API ----------------------------------------------------------

    def fit(self, X, y):
        from ..trainer.loop import train

        X = _check_inputs(X)
        y = _check_targets(y, len(X))
        self._initialize(X, y.shape[1])
        ckpt = None
        if self.checkpoint_dir is not None and self.checkpoint_every:
            out = Path(self.checkpoint_dir)
            out.mkdir(parents=True, exist_ok=True)
            ckpt = lambda it: self.save(out / f"iter_{it:06d}.ckpt")  # noqa: E731
        result = train(self.graph_, X.raster, self._standardize(X.aux), y, self.train_config(), ckpt)
        self.loss_curve_ = result.losses
        self.n_iter_ = result.iterations
        self.train_seconds_ = result.seconds
        return self

    def predict(self, X, batch_size: int = 256) -> np.ndarray:
        """``(N, H, 2)`` predicted positions in each target's actor frame."""
        check_is_fitted(self, "graph_")
        X = _check_inputs(X)
        if X.aux.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} aux features, got {X.aux.shape[1]}")
        aux = self._standardize(X.aux)
        out = []
        for s in range(0, len(X), batch_size):
            y = self.graph_.forward({"raster": X.raster[s:s + batch_size], "aux": aux[s:s + batch_size]})
            out.append(y[self.graph_.outputs[0]])
        pred = np.concatenate(out).reshape(len(X), -1, 2)
        return pred

    def score(self, X, y, sample_weight=None) -> float:
        """Negative mean ADE (higher is better)."""
        pred = self.predict(X)
        y = _check_targets(y, len(pred))
        if y.shape != pred.shape:
            raise ValueError(f"targets have horizon {y.shape[1]}, model predicts {pred.shape[1]}")
        d = np.linalg.norm(pred - y, axis=-1).mean(axis=1)
        return -float(np.average(d, weights=sample_weight))

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> Path:
        """Weights (with aux statistics) to ``path`` and the config to ``path.json``."""
        check_is_fitted(self, "graph_")
        path = Path(path)
        tensors = dict(self.graph_.params)
        tensors[AUX_MEAN_KEY] = self.aux_mean_
        tensors[AUX_STD_KEY] = self.aux_std_
        save_checkpoint(path, tensors, self.graph_.fingerprint())
        sidecar = {"model_config": self.config_.to_dict(), "estimator_params": _jsonable(self.get_params())}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "FMNetRegressor":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        params = sidecar["estimator_params"]
        params["warm_start_from"] = None
        est = cls(**params)
        est.config_ = ModelConfig.from_dict(sidecar["model_config"])
        est.graph_ = build_model(est.config_, seed=est.random_state)
        est.n_features_in_ = est.config_.aux_dim
        est.warm_start(path, strict=True, load_aux_stats=True)
        return est

    def warm_start(self, path, strict: bool = True, load_aux_stats: bool = False) -> dict:
        """Load weights from ``path``.

        Strict mode requires the same graph fingerprint. Lenient mode copies
        every parameter whose name and shape match and reports the rest.
        Aux statistics are kept from the current fit unless ``load_aux_stats``.
        """
        check_is_fitted(self, "graph_")
        fingerprint, tensors = load_checkpoint(path)
        mean, std = tensors.pop(AUX_MEAN_KEY, None), tensors.pop(AUX_STD_KEY, None)
        if strict and fingerprint != self.graph_.fingerprint():
            raise GraphError(f"{path}: checkpoint was written for a different graph")
        loaded, mismatched = {}, []
        for name, value in tensors.items():
            if name in self.graph_.params and self.graph_.params[name].shape == value.shape:
                loaded[name] = value
            else:
                mismatched.append(name)
        missing = [k for k in self.graph_.params if k not in loaded]
        if strict and (mismatched or missing):
            raise GraphError(f"{path}: {len(mismatched)} unmatched and {len(missing)} missing tensors")
        self.graph_.set_params(loaded)
        if load_aux_stats:
            if mean is None or std is None:
                raise GraphError(f"{path}: checkpoint has no aux statistics")
            self.aux_mean_, self.aux_std_ = mean, std
        report = {"loaded": len(loaded), "mismatched": mismatched, "missing": missing}
        if mismatched or missing:
            logger.info("warm start from %s: %d loaded, %d unmatched, %d left at init",
                        path, len(loaded), len(mismatched), len(missing))
        self.warm_start_report_ = report
        return report


def _jsonable(params: dict) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in params.items()}
