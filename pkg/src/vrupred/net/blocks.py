"""Inverted-bottleneck blocks."""
from __future__ import annotations

from dataclasses import dataclass

from ..tensor import Graph, GraphError

VARIANTS = ("mnv2", "fmnet", "fmnet_strided")


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    stride: int = 1
    k: int = 6  # channel upsample factor
    variant: str = "fmnet"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.k < 1:
            raise ValueError(f"upsample factor must be >= 1, got {self.k}")
        if self.variant != "mnv2" and (self.variant == "fmnet_strided") != (self.stride == 2):
            raise ValueError("fmnet_strided is used exactly when stride is 2")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def wide(self) -> int:
        return self.k * self.in_channels

    @classmethod
    def fmnet(cls, cin, cout, stride=1, k=6) -> "BlockSpec":
        return cls(cin, cout, stride, k, "fmnet_strided" if stride == 2 else "fmnet")


def _check_input(g: Graph, x: str, spec: BlockSpec):
    shape = g.shape(x)
    if len(shape) != 3 or shape[-1] != spec.in_channels:
        raise GraphError(f"block expects (H, W, {spec.in_channels}) input, got {shape} from {x!r}")


def mnv2_block(g: Graph, x: str, spec: BlockSpec, name: str = "mnv2_block") -> str:
    """Expand (1x1+BN+ReLU), depthwise (+BN+ReLU), linear projection (+BN), residual when shapes allow.

    With ``k == 1`` the expansion conv is omitted.
    """
    _check_input(g, x, spec)
    with g.scope(name, block=name, block_c=spec.in_channels, block_wide=spec.wide, variant="mnv2"):
        h = x
        if spec.k != 1:
            h = g.relu(g.batch_norm(g.conv1x1(h, spec.wide, name="expand"), name="expand_bn"), name="expand_relu")
        h = g.relu(g.batch_norm(g.dwconv2d(h, 3, spec.stride, name="dwconv"), name="dwconv_bn"), name="dwconv_relu")
        h = g.batch_norm(g.conv1x1(h, spec.out_channels, name="project"), name="project_bn")
        if spec.stride == 1 and spec.in_channels == spec.out_channels:
            h = g.add_(h, x, name="residual")
    return h


def fmnet_block(g: Graph, x: str, spec: BlockSpec, name: str = "fmnet_block",
                compress_init="zeros") -> str:
    """Depthwise conv on the narrow tensor, then expand, ReLU, compress, one bias.

    The skip path subsamples the input when strided and projects it with a
    1x1 conv when the channel count changes. There is no batch norm, so the
    compress conv starts at zero by default and a fresh block passes its skip
    path through unchanged; this keeps activations bounded in deep stacks.
    """
    if spec.variant == "mnv2":
        raise ValueError("fmnet_block needs an fmnet or fmnet_strided spec")
    _check_input(g, x, spec)
    with g.scope(name, block=name, block_c=spec.in_channels, block_wide=spec.wide, variant=spec.variant):
        h = g.dwconv2d(x, 3, spec.stride, name="dwconv")
        h = g.conv1x1(h, spec.wide, name="expand")
        h = g.relu(h, name="expand_relu")
        h = g.conv1x1(h, spec.out_channels, name="compress", init=compress_init)
        h = g.bias_add(h, name="bias")
        skip = x
        if spec.stride != 1:
            skip = g.subsample(skip, spec.stride, name="skip_subsample")
        if spec.in_channels != spec.out_channels:
            skip = g.conv1x1(skip, spec.out_channels, name="skip_project")
        h = g.add_(h, skip, name="residual")
    return h
