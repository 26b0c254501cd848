"""Graph IR: construction, shape inference, forward evaluation and reverse-mode gradients."""
from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import ops as O
from .init import he_normal


class GraphError(ValueError):
    """Malformed graph, or inputs that do not match a node's declared shape."""


@dataclass(frozen=True)
class Node:
    name: str
    op: O.Op
    inputs: tuple[str, ...]
    params: Mapping[str, str]  # role -> parameter name
    shape: tuple
    tags: frozenset = frozenset()
    meta: Mapping = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.op.kind

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: tuple
    trainable: bool = True
    tags: frozenset = frozenset()


class Graph:
    """Topologically ordered list of nodes plus a parameter registry.

    Nodes are appended through the builder methods, which infer shapes and
    raise :class:`GraphError` on inconsistencies. Parameter values are float32.
    """

    def __init__(self, name: str = "graph", seed: int = 0):
        self.name = name
        self.nodes: list[Node] = []
        self._index: dict[str, int] = {}
        self.params: dict[str, np.ndarray] = {}
        self.param_info: dict[str, ParamInfo] = {}
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.rng = np.random.default_rng(seed)
        self._scopes: list[tuple[str, frozenset, dict]] = []
        self._last_trace: Trace | None = None

    # -- construction -----------------------------------------------------

    @contextmanager
    def scope(self, name: str, tags=(), **meta):
        """Prefix node names with ``name/`` and attach ``tags`` and ``meta`` to new nodes."""
        self._scopes.append((name, frozenset(tags), meta))
        try:
            yield self
        finally:
            self._scopes.pop()

    def _context(self):
        prefix = "/".join(s[0] for s in self._scopes)
        tags = frozenset().union(*(s[1] for s in self._scopes)) if self._scopes else frozenset()
        meta = {}
        for s in self._scopes:
            meta.update(s[2])
        return prefix, tags, meta

    def _unique(self, base: str) -> str:
        if base not in self._index and base not in self.params:
            return base
        i = 1
        while f"{base}_{i}" in self._index or f"{base}_{i}" in self.params:
            i += 1
        return f"{base}_{i}"

    def add_param(self, name: str, value: np.ndarray, trainable: bool = True, tags=()) -> str:
        if name in self.params:
            raise GraphError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float32)
        self.params[name] = value
        self.param_info[name] = ParamInfo(name, value.shape, trainable, frozenset(tags))
        return name

    def add(self, op: O.Op, inputs=(), params: Mapping[str, np.ndarray] | None = None,
            name: str | None = None, trainable: Mapping[str, bool] | None = None) -> str:
        """Append a node computing ``op`` on ``inputs``; returns its name."""
        prefix, tags, meta = self._context()
        base = name or op.kind
        full = self._unique(f"{prefix}/{base}" if prefix else base)
        inputs = tuple(inputs)
        for i in inputs:
            if i not in self._index:
                raise GraphError(f"node {full!r}: unknown input {i!r}")
        params = dict(params or {})
        missing = set(op.param_roles) - set(params)
        if missing:
            raise GraphError(f"node {full!r}: missing parameters {sorted(missing)}")
        in_shapes = [self.nodes[self._index[i]].shape for i in inputs]
        p_shapes = {role: tuple(np.shape(v)) for role, v in params.items()}
        try:
            shape = tuple(int(s) for s in op.out_shape(in_shapes, p_shapes))
        except O.ShapeError as e:
            raise GraphError(f"node {full!r} ({op.kind}): {e}") from None
        p_names = {}
        for role, value in params.items():
            train = (trainable or {}).get(role, True)
            p_names[role] = self.add_param(f"{full}/{role}", value, trainable=train, tags=tags)
        node = Node(full, op, inputs, p_names, shape, tags, dict(meta))
        self._index[full] = len(self.nodes)
        self.nodes.append(node)
        if op.kind == "input":
            self.inputs.append(full)
        return full

    def _init(self, kind, shape, init):
        if isinstance(init, np.ndarray):
            if init.shape != tuple(shape):
                raise GraphError(f"initial value shape {init.shape} != {tuple(shape)}")
            return init
        if init == "zeros":
            return np.zeros(shape, np.float32)
        if init == "he":
            return he_normal(self.rng, kind, shape)
        raise GraphError(f"unknown initializer {init!r}")

    def input(self, name: str, shape) -> str:
        return self.add(O.Input(shape), name=name)

    def conv2d(self, x: str, cout: int, k: int = 3, stride: int = 1, name=None, init="he") -> str:
        cin = self.shape(x)[-1]
        shape = (k, k, cin, cout)
        op = O.Conv1x1() if k == 1 and stride == 1 else O.Conv2D(k, stride)
        return self.add(op, [x], {"w": self._init(op.kind, shape, init)}, name=name)

    def conv1x1(self, x: str, cout: int, name=None, init="he") -> str:
        return self.conv2d(x, cout, k=1, stride=1, name=name, init=init)

    def dwconv2d(self, x: str, k: int = 3, stride: int = 1, name=None, init="he") -> str:
        shape = (k, k, self.shape(x)[-1])
        return self.add(O.DepthwiseConv2D(k, stride), [x], {"w": self._init("dwconv2d", shape, init)}, name=name)

    def fc(self, x: str, dout: int, name=None, init="he") -> str:
        shape = (self.shape(x)[-1], dout)
        return self.add(O.FullyConnected(), [x], {"w": self._init("fc", shape, init)}, name=name)

    def bias_add(self, x: str, name=None, init="zeros") -> str:
        c = self.shape(x)[-1]
        value = init if isinstance(init, np.ndarray) else np.zeros(c, np.float32)
        return self.add(O.BiasAdd(), [x], {"b": value}, name=name)

    def relu(self, x: str, name=None) -> str:
        return self.add(O.ReLU(), [x], name=name)

    def batch_norm(self, x: str, name=None, eps: float = 1e-3, momentum: float = 0.99) -> str:
        c = self.shape(x)[-1]
        params = {"gamma": np.ones(c), "beta": np.zeros(c), "mean": np.zeros(c), "var": np.ones(c)}
        return self.add(O.BatchNorm(eps, momentum), [x], params, name=name,
                        trainable={"mean": False, "var": False})

    def add_(self, a: str, b: str, name=None) -> str:
        return self.add(O.Add(), [a, b], name=name)

    def global_avg_pool(self, x: str, name=None) -> str:
        return self.add(O.GlobalAvgPool(), [x], name=name)

    def reshape(self, x: str, shape, name=None) -> str:
        return self.add(O.Reshape(shape), [x], name=name)

    def concat(self, xs, name=None) -> str:
        return self.add(O.Concat(), list(xs), name=name)

    def subsample(self, x: str, stride: int = 2, name=None) -> str:
        return self.add(O.Subsample(stride), [x], name=name)

    def set_outputs(self, *names: str) -> None:
        for n in names:
            if n not in self._index:
                raise GraphError(f"unknown output node {n!r}")
        self.outputs = list(names)

    # -- queries ----------------------------------------------------------

    def node(self, name: str) -> Node:
        try:
            return self.nodes[self._index[name]]
        except KeyError:
            raise GraphError(f"no node named {name!r}") from None

    def shape(self, name: str) -> tuple:
        return self.node(name).shape

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, name) -> bool:
        return name in self._index

    def trainable_params(self) -> list[str]:
        return [n for n, info in self.param_info.items() if info.trainable]

    def validate(self) -> None:
        """Check that every node is reachable from a declared input."""
        reach = set(self.inputs)
        for node in self.nodes:
            if node.inputs and all(i in reach for i in node.inputs):
                reach.add(node.name)
        unreachable = [n.name for n in self.nodes if n.name not in reach]
        if unreachable:
            raise GraphError(f"nodes not reachable from an input: {unreachable[:5]}")

    def fingerprint(self) -> str:
        """sha256 over node kinds, wiring, attributes, shapes and parameter shapes."""
        desc = [
            [n.name, n.kind, n.op.attrs(), list(n.inputs), list(n.shape),
             sorted((r, p, list(self.params[p].shape)) for r, p in n.params.items())]
            for n in self.nodes
        ]
        desc.append(["outputs", self.outputs])
        blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def get_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, values: Mapping[str, np.ndarray]) -> None:
        for k, v in values.items():
            if k not in self.params:
                raise GraphError(f"unknown parameter {k!r}")
            v = np.asarray(v, dtype=np.float32)
            if v.shape != self.params[k].shape:
                raise GraphError(f"parameter {k!r}: shape {v.shape} != {self.params[k].shape}")
            self.params[k] = v.copy()

    # -- evaluation -------------------------------------------------------

    def run(self, inputs: Mapping[str, np.ndarray], training: bool = False,
            dtype=np.float32, params: Mapping[str, np.ndarray] | None = None) -> "Trace":
        """Evaluate every node in order and keep what backward needs."""
        src = self.params if params is None else params
        cast = {k: np.asarray(v, dtype=dtype) for k, v in src.items()}
        values: dict[str, np.ndarray] = {}
        caches: dict[str, object] = {}
        batch = None
        for node in self.nodes:
            if node.kind == "input":
                if node.name not in inputs:
                    raise GraphError(f"missing value for input {node.name!r}")
                x = np.asarray(inputs[node.name], dtype=dtype)
                if x.shape[1:] != node.shape:
                    raise GraphError(f"input {node.name!r}: expected (N,)+{node.shape}, got {x.shape}")
                if batch is None:
                    batch = x.shape[0]
                elif x.shape[0] != batch:
                    raise GraphError(f"input {node.name!r}: batch {x.shape[0]} != {batch}")
                values[node.name] = x
                continue
            xs = [values[i] for i in node.inputs]
            p = {role: cast[name] for role, name in node.params.items()}
            y, cache = node.op.forward(xs, p, training)
            if y.shape[1:] != node.shape:
                raise GraphError(f"node {node.name!r}: produced {y.shape[1:]}, declared {node.shape}")
            values[node.name] = y
            caches[node.name] = cache
        trace = Trace(self, values, caches, cast, training)
        self._last_trace = trace
        return trace

    def forward(self, inputs: Mapping[str, np.ndarray], training: bool = False, dtype=np.float32):
        """Output values keyed by output node name."""
        return self.run(inputs, training, dtype).outputs

    def backward(self, output_grads) -> dict[str, np.ndarray]:
        """Parameter gradients for the most recent :meth:`forward`."""
        if self._last_trace is None:
            raise GraphError("backward called before forward")
        return self._last_trace.backward(output_grads)


class Trace:
    """Values and caches from one forward evaluation."""

    def __init__(self, graph: Graph, values, caches, params, training):
        self.graph = graph
        self.values = values
        self.caches = caches
        self.params = params
        self.training = training
        self.input_grads: dict[str, np.ndarray] = {}

    @property
    def outputs(self) -> dict[str, np.ndarray]:
        return {o: self.values[o] for o in self.graph.outputs}

    def batch_norm_updates(self) -> dict[str, np.ndarray]:
        """Running mean/var after this training step (momentum average with batch stats)."""
        if not self.training:
            return {}
        out = {}
        for node in self.graph.nodes:
            if node.kind != "batch_norm":
                continue
            _, _, _, mean, var = self.caches[node.name]
            m = node.op.momentum
            for role, batch_stat in (("mean", mean), ("var", var)):
                pname = node.params[role]
                old = self.graph.params[pname]
                out[pname] = (m * old + (1.0 - m) * batch_stat).astype(np.float32)
        return out

    def backward(self, output_grads) -> dict[str, np.ndarray]:
        """Reverse pass. ``output_grads`` maps output names to dL/dy (an array is accepted for one output)."""
        g = self.graph
        if not isinstance(output_grads, Mapping):
            if len(g.outputs) != 1:
                raise GraphError("pass a dict of gradients for graphs with several outputs")
            output_grads = {g.outputs[0]: output_grads}
        grads: dict[str, np.ndarray] = {}
        for name, gy in output_grads.items():
            if name not in self.values:
                raise GraphError(f"gradient given for unknown node {name!r}")
            gy = np.asarray(gy, dtype=self.values[name].dtype)
            if gy.shape != self.values[name].shape:
                raise GraphError(f"gradient for {name!r}: shape {gy.shape} != {self.values[name].shape}")
            grads[name] = gy
        pgrads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for node in reversed(g.nodes):
            gy = grads.pop(node.name, None)
            if gy is None:
                continue
            if node.kind == "input":
                self.input_grads[node.name] = gy
                continue
            p = {role: self.params[name] for role, name in node.params.items()}
            gxs, gps = node.op.backward(gy, self.caches[node.name], p)
            for role, gp in gps.items():
                pgrads[node.params[role]] += gp
            for i, gx in zip(node.inputs, gxs):
                if gx is None:
                    continue
                grads[i] = grads[i] + gx if i in grads else gx
        return pgrads
