"""Full prediction models: optional learned-color layer, backbone, feature fusion, trajectory head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..raster import RasterConfig
from ..tensor import Graph, GraphError, same_padding
from .backbone import BackboneConfig, build_backbone

FUSIONS = ("concat", "spatial")
FUSION_TAG = "fusion"
HEAD_TAG = "head"


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a model graph. Defaults are the desk-scale setup."""

    raster: RasterConfig = field(default_factory=lambda: RasterConfig(n=64, resolution=0.5))
    aux_dim: int = 17
    horizon: int = 30
    fusion: str = "spatial"
    learned_colors: bool = False
    backbone: BackboneConfig | None = None
    concat_hidden: int = 4096
    c_mid: int = 8
    fusion_stage: str = "block3"

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.aux_dim < 1 or self.horizon < 1:
            raise ValueError("aux_dim and horizon must be positive")
        if self.learned_colors != (self.raster.color_mode == "multichannel_binary"):
            raise ValueError("learned_colors requires a multichannel_binary raster (and vice versa)")
        if self.backbone is None:
            object.__setattr__(self, "backbone", BackboneConfig.fmnet(input_size=self.raster.n))
        if self.backbone.input_size != self.raster.n:
            raise ValueError(f"backbone input {self.backbone.input_size} != raster size {self.raster.n}")

    @classmethod
    def full_scale(cls, fusion: str = "concat", arch: str = "fmnet") -> "ModelConfig":
        """300 px rasters at 0.2 m, H=60, and a 1024-wide concat layer (640 + A with A=384)."""
        bb = BackboneConfig.fmnet() if arch == "fmnet" else BackboneConfig.mnv2()
        return cls(raster=RasterConfig(), aux_dim=384, horizon=60, fusion=fusion, backbone=bb)

    @property
    def input_channels(self) -> int:
        return self.raster.channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["raster"] = self.raster.to_dict()
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["raster"] = RasterConfig(**d["raster"])
        bb = dict(d["backbone"])
        bb["rows"] = tuple(tuple(r) for r in bb["rows"])
        d["backbone"] = BackboneConfig(**bb)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def stage_shape(cfg: BackboneConfig, stage: str) -> tuple:
    """Output shape of a backbone stage, from the stride arithmetic alone."""
    side = cfg.input_size
    side = same_padding(side, 3, 2)[0]
    if cfg.arch == "fmnet":
        side = same_padding(side, 3, 2)[0]
    if stage.startswith("block") and stage != "block0":
        i = int(stage[5:])
        for cout, stride, _ in cfg.rows[:i]:
            side = same_padding(side, 3, stride)[0]
        return (side, side, cfg.ch(cfg.rows[i - 1][0]))
    raise ValueError(f"no shape rule for stage {stage!r}")


def learned_color_layer(g: Graph, x: str, name: str = "color_conv") -> str:
    """Linear 1x1 conv mapping an L-channel binary raster to 3 channels."""
    with g.scope("color"):
        return g.conv1x1(x, 3, name=name)


def spatial_fusion(g: Graph, aux: str, fmap: str, c_mid: int = 8, expected: tuple | None = None) -> str:
    """FC -> ReLU -> reshape -> 1x1 conv, added to ``fmap``."""
    shape = g.shape(fmap)
    if len(shape) != 3 or (expected is not None and shape != tuple(expected)):
        raise GraphError(f"spatial fusion expects a feature map of shape {expected}, got {shape}")
    h, w, c = shape
    with g.scope("spatial_fusion", tags=(FUSION_TAG,)):
        z = g.relu(g.bias_add(g.fc(aux, h * w * c_mid, name="fc"), name="fc_bias"), name="fc_relu")
        z = g.reshape(z, (h, w, c_mid), name="reshape")
        z = g.conv1x1(z, c, name="conv1x1")
        return g.add_(fmap, z, name="add")


def trajectory_head(g: Graph, x: str, horizon: int) -> str:
    """Linear layer to 2H values, zero-initialized (the untrained model predicts standing still)."""
    dout = 2 * horizon
    with g.scope("trajectory", tags=(HEAD_TAG,)):
        y = g.fc(x, dout, name="fc", init="zeros")
        return g.bias_add(y, name="bias")


def concat_fusion_head(g: Graph, emb: str, aux: str, horizon: int, hidden: int = 4096) -> str:
    """concat(embedding, aux) -> FC(hidden) + ReLU -> linear FC to 2H."""
    with g.scope("concat_fusion", tags=(FUSION_TAG,)):
        h = g.concat([emb, aux], name="concat")
        h = g.relu(g.bias_add(g.fc(h, hidden, name="fc"), name="fc_bias"), name="fc_relu")
    return trajectory_head(g, h, horizon)


def build_model(cfg: ModelConfig, seed: int = 0) -> Graph:
    """Graph with inputs ``raster`` (n, n, C) and ``aux`` (A,), output ``trajectory`` (2H,)."""
    g = Graph(f"{cfg.backbone.arch}_{cfg.fusion}", seed=seed)
    n = cfg.raster.n
    raster = g.input("raster", (n, n, cfg.input_channels))
    aux = g.input("aux", (cfg.aux_dim,))
    x = learned_color_layer(g, raster) if cfg.learned_colors else raster
    bb = replace(cfg.backbone, in_channels=3)
    hooks = {}
    if cfg.fusion == "spatial":
        expected = stage_shape(bb, cfg.fusion_stage)
        hooks[cfg.fusion_stage] = lambda gr, fmap: spatial_fusion(gr, aux, fmap, cfg.c_mid, expected)
    stages = build_backbone(g, x, bb, hooks)
    if cfg.fusion == "concat":
        out = concat_fusion_head(g, stages["gap"], aux, cfg.horizon, cfg.concat_hidden)
    else:
        out = trajectory_head(g, stages["gap"], cfg.horizon)
    g.set_outputs(out)
    g.validate()
    return g


def predict_trajectory(g: Graph, raster: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """Run the model; returns ``(N, H, 2)`` actor-frame points for steps 1..H."""
    out = g.forward({"raster": raster, "aux": aux})[g.outputs[0]]
    return out.reshape(out.shape[0], -1, 2)


__all__ = [
    "ModelConfig", "build_model", "spatial_fusion", "concat_fusion_head", "learned_color_layer",
    "trajectory_head", "predict_trajectory", "stage_shape", "FUSION_TAG", "HEAD_TAG",
]
