"""FMNet and MobileNetV2-0.5 backbones ending in a global-average-pooled embedding."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping

from ..tensor import Graph, GraphError
from .blocks import BlockSpec, fmnet_block, mnv2_block

# (out_channels, stride of first repeat, repeats)
FMNET_ROWS = ((12, 1, 2), (16, 2, 3), (32, 2, 4), (48, 1, 3), (80, 2, 3), (160, 1, 1))
# MobileNetV2 at width 0.5, after its t=1 block
MNV2_ROWS = ((12, 2, 2), (16, 2, 3), (32, 2, 4), (48, 1, 3), (80, 2, 3), (160, 1, 1))

Hook = Callable[[Graph, str], str]


@dataclass(frozen=True)
class BackboneConfig:
    arch: str = "fmnet"  # "fmnet" or "mnv2"
    input_size: int = 300
    in_channels: int = 3
    stem_channels: int = 24
    rows: tuple = FMNET_ROWS
    embedding: int = 640
    k: int = 6
    width: float = 1.0

    def __post_init__(self):
        if self.arch not in ("fmnet", "mnv2"):
            raise ValueError(f"arch must be 'fmnet' or 'mnv2', got {self.arch!r}")
        if self.input_size < 1 or self.width <= 0:
            raise ValueError("input_size and width must be positive")
        object.__setattr__(self, "rows", tuple(tuple(int(v) for v in r) for r in self.rows))

    @classmethod
    def fmnet(cls, **kw) -> "BackboneConfig":
        return cls(**kw)

    @classmethod
    def mnv2(cls, **kw) -> "BackboneConfig":
        kw.setdefault("stem_channels", 16)
        kw.setdefault("rows", MNV2_ROWS)
        return cls(arch="mnv2", **kw)

    def ch(self, c: int) -> int:
        return max(1, int(round(c * self.width)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows"] = [list(r) for r in self.rows]
        return d


def build_backbone(g: Graph, x: str, cfg: BackboneConfig,
                   hooks: Mapping[str, Hook] | None = None) -> dict[str, str]:
    """Append the backbone to ``g`` starting from node ``x``.

    Returns the node for each stage (``conv``, ``dwconv`` or ``block0``,
    ``block1`` .. ``blockN``, ``conv1x1``, ``gap``). ``hooks[stage]`` may
    replace a stage output, which is how spatial fusion is injected.
    """
    expected = (cfg.input_size, cfg.input_size, cfg.in_channels)
    if g.shape(x) != expected:
        raise GraphError(f"backbone expects input {expected}, got {g.shape(x)}")
    hooks = dict(hooks or {})
    stages = {"input": x}

    def stage(name, node):
        if name in hooks:
            node = hooks.pop(name)(g, node)
        stages[name] = node
        return node

    c = cfg.ch(cfg.stem_channels)
    with g.scope("stem"):
        if cfg.arch == "fmnet":
            h = stage("conv", g.relu(g.bias_add(g.conv2d(x, c, 3, 2, name="conv"), name="conv_bias"), name="conv_relu"))
            h = stage("dwconv", g.relu(g.bias_add(g.dwconv2d(h, 3, 2, name="dwconv"), name="dwconv_bias"),
                                       name="dwconv_relu"))
        else:
            h = stage("conv", g.relu(g.batch_norm(g.conv2d(x, c, 3, 2, name="conv"), name="conv_bn"), name="conv_relu"))
    if cfg.arch == "mnv2":
        cout = cfg.ch(cfg.stem_channels // 2)
        h = stage("block0", mnv2_block(g, h, BlockSpec(c, cout, 1, 1, "mnv2"), name="block0"))
        c = cout
    for i, (cout, stride, repeats) in enumerate(cfg.rows, start=1):
        cout = cfg.ch(cout)
        for r in range(repeats):
            s = stride if r == 0 else 1
            name = f"block{i}_{r}"
            if cfg.arch == "fmnet":
                h = fmnet_block(g, h, BlockSpec.fmnet(c, cout, s, cfg.k), name=name)
            else:
                h = mnv2_block(g, h, BlockSpec(c, cout, s, cfg.k, "mnv2"), name=name)
            c = cout
        h = stage(f"block{i}", h)
    with g.scope("head"):
        h = g.conv1x1(h, cfg.ch(cfg.embedding), name="conv1x1")
        if cfg.arch == "fmnet":
            h = g.relu(g.bias_add(h, name="conv1x1_bias"), name="conv1x1_relu")
        else:
            h = g.relu(g.batch_norm(h, name="conv1x1_bn"), name="conv1x1_relu")
        h = stage("conv1x1", h)
        stage("gap", g.global_avg_pool(h, name="gap"))
    if hooks:
        raise GraphError(f"unknown backbone stages for hooks: {sorted(hooks)}")
    return stages


def backbone_graph(cfg: BackboneConfig = BackboneConfig(), seed: int = 0) -> Graph:
    """Standalone backbone graph (input ``image`` to output ``embedding``)."""
    g = Graph(f"{cfg.arch}_backbone", seed=seed)
    x = g.input("image", (cfg.input_size, cfg.input_size, cfg.in_channels))
    stages = build_backbone(g, x, cfg)
    g.set_outputs(stages["gap"])
    return g
