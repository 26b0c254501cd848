"""Dense NHWC tensor graphs with reverse-mode gradients, in numpy."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import Graph, GraphError, Node, ParamInfo, Trace
from .init import he_normal, truncated_normal
from .ops import OP_KINDS, ShapeError, same_padding

__all__ = [
    "Graph", "GraphError", "Node", "ParamInfo", "Trace", "ShapeError", "OP_KINDS", "same_padding",
    "save_checkpoint", "load_checkpoint", "CheckpointError", "he_normal", "truncated_normal",
]
