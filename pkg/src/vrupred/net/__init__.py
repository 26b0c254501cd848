"""Network definitions: blocks, backbones, fusion heads and the estimator wrapper."""
from .backbone import FMNET_ROWS, MNV2_ROWS, BackboneConfig, backbone_graph, build_backbone
from .blocks import BlockSpec, fmnet_block, mnv2_block
from .estimator import ExampleFeaturizer, FMNetRegressor, ModelInputs, aux_dim, aux_features, targets
from .model import (
    ModelConfig, build_model, concat_fusion_head, learned_color_layer, predict_trajectory,
    spatial_fusion, stage_shape, trajectory_head,
)

__all__ = [
    "BlockSpec", "fmnet_block", "mnv2_block", "BackboneConfig", "build_backbone", "backbone_graph",
    "FMNET_ROWS", "MNV2_ROWS", "ModelConfig", "build_model", "spatial_fusion", "concat_fusion_head",
    "learned_color_layer", "trajectory_head", "predict_trajectory", "stage_shape",
    "ExampleFeaturizer", "FMNetRegressor", "ModelInputs", "aux_features", "aux_dim", "targets",
]
