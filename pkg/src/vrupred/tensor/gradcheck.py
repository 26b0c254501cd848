"""Central finite-difference checks of :meth:`Trace.backward`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph


@dataclass
class GradCheckResult:
    """Relative error per checked tensor (parameters and graph inputs).

    ``overall`` is the relative error of all checked entries taken as one vector.
    ``skipped`` counts probes dropped because a ReLU changed sign within ``±eps``,
    where central differences do not estimate the derivative.
    """

    errors: dict = field(default_factory=dict)
    overall: float = 0.0
    skipped: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def _rel(a: np.ndarray, n: np.ndarray) -> float:
    a, n = np.ravel(a), np.ravel(n)
    scale = np.linalg.norm(a) + np.linalg.norm(n)
    return 0.0 if scale == 0 else float(2 * np.linalg.norm(a - n) / scale)


def check_gradients(graph: Graph, inputs: dict, *, dtype=np.float64, eps: float = 1e-6,
                    training: bool = False, seed: int = 0, coords: int | None = 16,
                    directional: bool = False, tensors=None, check_inputs: bool = True,
                    reference_dtype=None) -> GradCheckResult:
    """Compare backward against central differences of ``L = sum(w * y)`` with random ``w``.

    ``coords`` limits the per-coordinate check to a random subset of each tensor
    (``None`` checks every entry). With ``directional``, each tensor is instead
    probed along one direction ``sign(g) * u`` with ``u ~ U(0.5, 1)``, which costs
    two evaluations per tensor and weights every coordinate positively.
    ``reference_dtype`` runs the differenced forward passes in another precision
    (e.g. float64 against float32 gradients), taking forward roundoff out of the
    numerical side.
    """
    # own stream, so weights never replay the draws that produced the inputs
    rng = np.random.default_rng([seed, 0x67726164])
    params = {k: np.asarray(v, dtype=dtype) for k, v in graph.params.items()}
    xs = {k: np.asarray(v, dtype=dtype) for k, v in inputs.items()}
    trace = graph.run(xs, training, dtype, params)
    weights = {o: rng.standard_normal(trace.values[o].shape).astype(dtype) for o in graph.outputs}
    pgrads = trace.backward(weights)
    igrads = trace.input_grads
    ref = np.dtype(dtype if reference_dtype is None else reference_dtype)
    if ref != np.dtype(dtype):
        params = {k: np.asarray(v, dtype=ref) for k, v in graph.params.items()}
        xs = {k: np.asarray(v, dtype=ref) for k, v in inputs.items()}
        trace = graph.run(xs, training, ref, params)

    relu_inputs = [n.inputs[0] for n in graph.nodes if n.kind == "relu"]

    def pattern(t) -> np.ndarray:
        if not relu_inputs:
            return np.zeros(0, bool)
        return np.concatenate([(t.values[i] > 0).ravel() for i in relu_inputs])

    base_pattern = pattern(trace)

    def loss(p, x) -> tuple[float, bool]:
        t = graph.run(x, training, ref, p)
        value = float(sum(np.sum(weights[o].astype(np.float64) * t.values[o].astype(np.float64))
                          for o in graph.outputs))
        return value, bool(np.array_equal(pattern(t), base_pattern))

    targets = [("param", k) for k in graph.trainable_params()]
    if check_inputs:
        targets += [("input", k) for k in xs]
    if tensors is not None:
        targets = [t for t in targets if t[1] in tensors]
    result = GradCheckResult()
    all_a, all_n = [], []
    for kind, name in targets:
        store = params if kind == "param" else xs
        analytic = (pgrads[name] if kind == "param" else igrads.get(name, np.zeros_like(store[name])))
        base = store[name]

        def probe(delta):
            store[name] = base + delta
            up, smooth_up = loss(params, xs)
            store[name] = base - delta
            down, smooth_down = loss(params, xs)
            store[name] = base
            return (up - down) / (2 * eps), smooth_up and smooth_down

        if directional:
            d = np.where(analytic >= 0, 1.0, -1.0) * rng.uniform(0.5, 1.0, base.shape)
            num, smooth = probe((eps * d).astype(ref))
            if not smooth:
                result.skipped += 1
                continue
            ana = float(np.sum(analytic.astype(np.float64) * d))
            result.errors[f"{kind}:{name}"] = _rel(np.array(ana), np.array(num))
            all_a.append(ana)
            all_n.append(num)
            continue
        order = np.arange(base.size) if coords is None else rng.permutation(base.size)
        want = base.size if coords is None else min(coords, base.size)
        ana, num, dropped = [], [], 0
        for idx in order:
            if len(num) == want or (coords is not None and dropped > 20 * want):
                break
            delta = np.zeros(base.size, dtype=ref)
            delta[idx] = eps
            value, smooth = probe(delta.reshape(base.shape))
            if not smooth:
                result.skipped += 1
                dropped += 1
                continue
            ana.append(float(analytic.ravel()[idx]))
            num.append(value)
        if num:
            result.errors[f"{kind}:{name}"] = _rel(np.array(ana), np.array(num))
            all_a += ana
            all_n += num
    result.overall = _rel(np.array(all_a), np.array(all_n))
    return result
