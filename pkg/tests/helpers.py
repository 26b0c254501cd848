"""Shared builders for tests."""
import math

import numpy as np

from vrupred.geom import Point2, Pose
from vrupred.scene import ActorState, ActorType, Example, examples_from_states


def state(actor_id="a", t=0.0, x=0.0, y=0.0, heading=0.0, v=0.0, a=0.0, hcr=0.0,
          bbox=(0.6, 0.6), actor_type=ActorType.PEDESTRIAN):
    return ActorState(actor_id, t, Pose(Point2(x, y), heading), v, a, hcr, bbox, actor_type)


def cv_track(actor_id="a", n=20, x0=0.0, y0=0.0, heading=0.0, v=1.0, dt=0.1, t0=0.0,
             actor_type=ActorType.PEDESTRIAN, bbox=(0.6, 0.6)):
    c, s = math.cos(heading), math.sin(heading)
    return [state(actor_id, round(t0 + k * dt, 6), x0 + c * v * k * dt, y0 + s * v * k * dt, heading, v,
                  bbox=bbox, actor_type=actor_type) for k in range(n)]


def single_example(target=None, others=(), scene_map=None, horizon=5, light_states=()):
    target = target or state("target")
    return Example(target, (target, *others), scene_map, np.zeros((horizon, 2)), light_states=light_states)


def cv_examples(n_actors=3, horizon=10, n=25, seed=0):
    rng = np.random.default_rng(seed)
    states = []
    for i in range(n_actors):
        states += cv_track(f"a{i}", n, *rng.uniform(-20, 20, 2), rng.uniform(-math.pi, math.pi),
                           rng.uniform(0.5, 2.0))
    return examples_from_states(states, horizon)[0]


# -- tensor graphs -------------------------------------------------------

OP_CASES = ("conv2d", "conv2d_s2", "conv1x1", "dwconv2d", "dwconv2d_s2", "fc", "bias_add", "relu",
            "batch_norm", "batch_norm_train", "add", "global_avg_pool", "reshape", "concat", "subsample")


def randomize_params(graph, rng, scale=None):
    """Random finite values for every parameter; variances and BN scales stay positive."""
    for name, v in graph.params.items():
        if name.endswith("/var"):
            graph.params[name] = rng.uniform(0.5, 1.5, v.shape).astype(np.float32)
        elif name.endswith("/gamma"):
            # a near-zero scale would shrink the input gradient to rounding noise
            graph.params[name] = rng.uniform(0.5, 1.5, v.shape).astype(np.float32)
        else:
            fan = int(np.prod(v.shape[:-1])) if v.ndim > 1 else v.shape[0]
            std = scale if scale is not None else 0.5 * np.sqrt(1.0 / max(fan, 1))
            graph.params[name] = (std * rng.standard_normal(v.shape)).astype(np.float32)


def op_case(kind, rng):
    """Single-op graph on a random small shape (at most 8x8x4) plus random inputs.

    Returns ``(graph, inputs, training)``.
    """
    from vrupred.tensor import Graph

    h, w = (int(s) for s in rng.integers(1, 9, 2))
    c = int(rng.integers(1, 5))
    batch = 3
    g = Graph(kind, seed=int(rng.integers(1 << 30)))
    vector = kind in ("fc",)
    x = g.input("x", (c,) if vector else (h, w, c))
    inputs = {"x": rng.standard_normal((batch,) + g.shape(x))}
    training = False
    if kind == "conv2d":
        y = g.conv2d(x, int(rng.integers(1, 5)))
    elif kind == "conv2d_s2":
        y = g.conv2d(x, int(rng.integers(1, 5)), stride=2)
    elif kind == "conv1x1":
        y = g.conv1x1(x, int(rng.integers(1, 5)))
    elif kind == "dwconv2d":
        y = g.dwconv2d(x)
    elif kind == "dwconv2d_s2":
        y = g.dwconv2d(x, stride=2)
    elif kind == "fc":
        y = g.fc(x, int(rng.integers(1, 5)))
    elif kind == "bias_add":
        y = g.bias_add(x)
    elif kind == "relu":
        # keep pre-activations away from the kink
        v = rng.uniform(0.1, 1.0, inputs["x"].shape) * rng.choice([-1.0, 1.0], inputs["x"].shape)
        inputs["x"] = v
        y = g.relu(x)
    elif kind in ("batch_norm", "batch_norm_train"):
        y = g.batch_norm(x)
        training = kind == "batch_norm_train"
    elif kind == "add":
        x2 = g.input("x2", (h, w, c))
        inputs["x2"] = rng.standard_normal((batch, h, w, c))
        y = g.add_(x, x2)
    elif kind == "global_avg_pool":
        y = g.global_avg_pool(x)
    elif kind == "reshape":
        y = g.reshape(x, (h * w * c,))
    elif kind == "concat":
        c2 = int(rng.integers(1, 5))
        x2 = g.input("x2", (h, w, c2))
        inputs["x2"] = rng.standard_normal((batch, h, w, c2))
        y = g.concat([x, x2])
    elif kind == "subsample":
        y = g.subsample(x, 2)
    else:
        raise KeyError(kind)
    g.set_outputs(y)
    randomize_params(g, rng, scale=1.0)
    return g, inputs, training


def miniature_model(fusion, seed=0):
    """FMNet on a 20x20 raster with a short horizon, for end-to-end gradient checks."""
    from vrupred.net import BackboneConfig, ModelConfig, build_model
    from vrupred.raster import RasterConfig

    cfg = ModelConfig(raster=RasterConfig(n=20, resolution=0.5), aux_dim=5, horizon=4, fusion=fusion,
                      concat_hidden=32, backbone=BackboneConfig.fmnet(input_size=20))
    return build_model(cfg, seed=seed)


def model_gradcheck(graph, seed, dtype, eps, **kw):
    """Overall relative error on a random subset of parameters plus both inputs."""
    from vrupred.tensor.gradcheck import check_gradients

    base = dict(graph.params)
    rng = np.random.default_rng(seed)
    for k, v in base.items():
        # zero-initialized layers would hide upstream gradients
        if graph.param_info[k].trainable and not v.any():
            fan = int(np.prod(v.shape[:-1])) if v.ndim > 1 else v.shape[0]
            graph.params[k] = (0.5 * np.sqrt(1.0 / fan) * rng.standard_normal(v.shape)).astype(np.float32)
    x = {"raster": rng.uniform(0, 1, (2, 20, 20, 3)), "aux": rng.standard_normal((2, 5))}
    names = list(rng.choice(graph.trainable_params(), 8, replace=False)) + ["raster", "aux"]
    try:
        return check_gradients(graph, x, dtype=dtype, eps=eps, tensors=names, seed=seed, **{"coords": 3, **kw})
    finally:
        graph.params = base
