"""Static cost analysis of a :class:`~vrupred.tensor.Graph`.

Conventions
-----------
* FLOPS: one multiply-accumulate counts as 2. conv: ``2*H*W*K*K*Cin*Cout``;
  depthwise conv: ``2*H*W*K*K*C``; fc: ``2*in*out``; elementwise ops, bias,
  relu and batch norm: 1 per output element; pooling: 1 per input element.
  Data movement ops (input, reshape, concat, subsample) cost 0.
* Parameters: every registered tensor, batch-norm running statistics included.
* MAC and op counts are taken over the graph lowered to single kernels, the
  way an unfused runtime executes it: batch norm becomes five per-channel
  kernels (add eps, rsqrt, scale, shift, subtract) and two full-size kernels
  (multiply, add). MAC is the sum of every kernel's output size plus each
  parameter once, at 4 bytes per element.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .tensor import Graph, Node

BYTES_PER_ELEMENT = 4
FUSION_TAG = "fusion"
CONVENTION = "FLOPS: multiply-add = 2; MAC: lowered kernel outputs + parameters, f32"


class UnknownOpError(ValueError):
    pass


def _flops_conv(g, n):
    h, w, cout = n.shape
    k, _, cin, _ = g.params[n.params["w"]].shape
    return 2 * h * w * k * k * cin * cout


def _flops_dw(g, n):
    h, w, c = n.shape
    k = g.params[n.params["w"]].shape[0]
    return 2 * h * w * k * k * c


def _flops_fc(g, n):
    din, dout = g.params[n.params["w"]].shape
    return 2 * din * dout


_FLOPS = {
    "input": lambda g, n: 0,
    "conv2d": _flops_conv,
    "conv1x1": _flops_conv,
    "dwconv2d": _flops_dw,
    "fc": _flops_fc,
    "relu": lambda g, n: n.size,
    "bias_add": lambda g, n: n.size,
    "batch_norm": lambda g, n: n.size,
    "add": lambda g, n: n.size,
    "global_avg_pool": lambda g, n: int(np.prod(g.shape(n.inputs[0]))),
    "reshape": lambda g, n: 0,
    "concat": lambda g, n: 0,
    "subsample": lambda g, n: 0,
}


def node_flops(g: Graph, node: Node) -> int:
    try:
        return int(_FLOPS[node.kind](g, node))
    except KeyError:
        raise UnknownOpError(f"node {node.name!r}: no FLOPS rule for op kind {node.kind!r}") from None


def lower(node: Node) -> list[tuple[str, int]]:
    """Kernels ``(kind, output_elements)`` that ``node`` decomposes into."""
    if node.kind not in _FLOPS:
        raise UnknownOpError(f"node {node.name!r}: unknown op kind {node.kind!r}")
    if node.kind == "batch_norm":
        c = node.shape[-1]
        per_channel = [("add_eps", c), ("rsqrt", c), ("mul_gamma", c), ("mul_mean", c), ("sub_beta", c)]
        return per_channel + [("mul", node.size), ("add", node.size)]
    return [(node.kind, node.size)]


def node_params(g: Graph, node: Node) -> int:
    return int(sum(g.params[p].size for p in node.params.values()))


def _included(node: Node, exclude_fusion: bool) -> bool:
    return not (exclude_fusion and FUSION_TAG in node.tags)


def count_flops(g: Graph, exclude_fusion: bool = False) -> int:
    return sum(node_flops(g, n) for n in g.nodes if _included(n, exclude_fusion))


def count_params(g: Graph, exclude_fusion: bool = False) -> int:
    """Sum of parameter sizes; fusion layers are skipped when ``exclude_fusion``."""
    return sum(node_params(g, n) for n in g.nodes if _included(n, exclude_fusion))


def estimate_mac(g: Graph, exclude_fusion: bool = False) -> int:
    """Bytes: every lowered kernel output plus every parameter once."""
    total = 0
    for n in g.nodes:
        if _included(n, exclude_fusion):
            total += sum(e for _, e in lower(n)) + node_params(g, n)
    return total * BYTES_PER_ELEMENT


def count_ops(g: Graph, lowered: bool = True, exclude_fusion: bool = False) -> int:
    """Compute kernels, input placeholders excluded. ``lowered=False`` counts IR nodes."""
    total = 0
    for n in g.nodes:
        if n.kind == "input" or not _included(n, exclude_fusion):
            continue
        total += len(lower(n)) if lowered else 1
    return total


def node_phase(node: Node) -> str | None:
    """``upsampled`` for nodes at the block's expanded width, ``bottleneck`` for other block nodes."""
    meta = node.meta
    if "block" not in meta:
        return None
    wide, c = meta["block_wide"], meta["block_c"]
    if wide > c and node.shape[-1] >= wide:
        return "upsampled"
    return "bottleneck"


@dataclass
class PhaseCost:
    flops: int = 0
    mac_bytes: int = 0
    num_ops: int = 0
    kinds: list = field(default_factory=list)


def phase_breakdown(g: Graph, block: str | None = None) -> dict[str, PhaseCost]:
    """Cost of block nodes split into upsampled and bottleneck phases.

    ``block`` restricts the analysis to one block (by its scope name).
    """
    out = {"upsampled": PhaseCost(), "bottleneck": PhaseCost()}
    for n in g.nodes:
        phase = node_phase(n)
        if phase is None or (block is not None and n.meta["block"] != block):
            continue
        pc = out[phase]
        pc.flops += node_flops(g, n)
        pc.mac_bytes += (sum(e for _, e in lower(n)) + node_params(g, n)) * BYTES_PER_ELEMENT
        pc.num_ops += len(lower(n))
        pc.kinds.append(n.kind)
    return out


def conv1x1_flops_share(g: Graph, min_k: int = 2) -> float:
    """Fraction of block FLOPS spent in 1x1 convs, over blocks with expansion ``>= min_k``."""
    conv = total = 0
    for n in g.nodes:
        meta = n.meta
        if "block" not in meta or meta["block_wide"] < min_k * meta["block_c"]:
            continue
        f = node_flops(g, n)
        total += f
        if n.kind == "conv1x1":
            conv += f
    if total == 0:
        raise ValueError("graph has no expanded blocks")
    return conv / total


@dataclass
class CostReport:
    name: str
    flops: int
    params: int
    mac_bytes: int
    num_ops: int
    rows: list[dict]
    phases: dict[str, PhaseCost]

    COLUMNS = ("node", "kind", "shape", "flops", "params", "mac_bytes", "num_ops", "phase", "fusion")

    def check_totals(self) -> None:
        for key in ("flops", "params", "mac_bytes", "num_ops"):
            if sum(r[key] for r in self.rows) != getattr(self, key):
                raise AssertionError(f"{key} total disagrees with breakdown")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "shape": "x".join(map(str, r["shape"]))})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def summary(self) -> dict:
        return {"model": self.name, "flops": self.flops, "params": self.params,
                "mac_bytes": self.mac_bytes, "num_ops": self.num_ops}


def analyze(g: Graph, name: str | None = None, exclude_fusion: bool = False) -> CostReport:
    """Per-node breakdown and totals. Fusion nodes are dropped when ``exclude_fusion``."""
    rows = []
    for n in g.nodes:
        if not _included(n, exclude_fusion):
            continue
        kernels = lower(n)
        p = node_params(g, n)
        rows.append({
            "node": n.name,
            "kind": n.kind,
            "shape": n.shape,
            "flops": node_flops(g, n),
            "params": p,
            "mac_bytes": (sum(e for _, e in kernels) + p) * BYTES_PER_ELEMENT,
            "num_ops": 0 if n.kind == "input" else len(kernels),
            "phase": node_phase(n) or "",
            "fusion": FUSION_TAG in n.tags,
        })
    report = CostReport(
        name=name or g.name,
        flops=sum(r["flops"] for r in rows),
        params=sum(r["params"] for r in rows),
        mac_bytes=sum(r["mac_bytes"] for r in rows),
        num_ops=sum(r["num_ops"] for r in rows),
        rows=rows,
        phases=phase_breakdown(g),
    )
    return report


def _human(v: float, unit: str = "") -> str:
    for div, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(v) >= div:
            return f"{v / div:.1f}{suffix}{unit}"
    return f"{v:.0f}{unit}"


def format_table(reports: list[CostReport]) -> str:
    """Side-by-side totals: FLOPS, parameters, MAC and op count."""
    header = ("Model", "FLOPS", "Num. parameters", "MAC", "Num. ops")
    body = [(r.name, _human(r.flops), _human(r.params), _human(r.mac_bytes, "B"), str(r.num_ops))
            for r in reports]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    line = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths))  # noqa: E731
    out = [f"# {CONVENTION}", line(header), line(tuple("-" * w for w in widths))]
    out += [line(row) for row in body]
    return "\n".join(out)


def reports_to_csv(reports: list[CostReport], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=("model", "flops", "params", "mac_bytes", "num_ops"), lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.summary())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text
