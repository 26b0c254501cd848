"""Forward/backward kernels for the graph IR.

All tensors carry a leading batch axis: feature maps are ``(N, H, W, C)`` and
vectors ``(N, D)``. Node shapes elsewhere in the package omit the batch axis.
Every kernel computes in the dtype of its inputs, which lets the same graph run
in float32 or in a float64 shadow mode.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with an op's semantics."""


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """``(out, pad_before, pad_after)`` for 'same' padding; ``out = ceil(size / stride)``."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


class Op:
    kind = "op"
    param_roles: tuple[str, ...] = ()

    def out_shape(self, in_shapes: list[tuple], param_shapes: dict) -> tuple:
        raise NotImplementedError

    def forward(self, xs, p, training=False):
        raise NotImplementedError

    def backward(self, gy, cache, p):
        raise NotImplementedError

    def attrs(self) -> dict:
        return {}


class Input(Op):
    kind = "input"

    def __init__(self, shape):
        self.shape = tuple(shape)

    def out_shape(self, in_shapes, param_shapes):
        return self.shape

    def attrs(self):
        return {"shape": list(self.shape)}


def _require_fmap(shape, what):
    if len(shape) != 3:
        raise ShapeError(f"{what} expects an (H, W, C) feature map, got {shape}")


class Conv2D(Op):
    """k x k convolution, 'same' zero padding, no bias. Weights ``(k, k, Cin, Cout)``."""

    kind = "conv2d"
    param_roles = ("w",)

    def __init__(self, k: int = 3, stride: int = 1):
        if stride not in (1, 2):
            raise ShapeError(f"conv stride must be 1 or 2, got {stride}")
        self.k, self.stride = k, stride

    def attrs(self):
        return {"k": self.k, "stride": self.stride}

    def out_shape(self, in_shapes, param_shapes):
        (h, w, c), = in_shapes
        kh, kw, cin, cout = param_shapes["w"]
        if cin != c:
            raise ShapeError(f"conv expects {cin} input channels, got {c}")
        return (same_padding(h, self.k, self.stride)[0], same_padding(w, self.k, self.stride)[0], cout)

    def forward(self, xs, p, training=False):
        x, = xs
        w = p["w"]
        k, s = self.k, self.stride
        n, h, wd, c = x.shape
        cout = w.shape[-1]
        if k == 1:
            xs_ = x[:, ::s, ::s, :] if s > 1 else x
            ho, wo = xs_.shape[1:3]
            y = (xs_.reshape(-1, c) @ w.reshape(c, cout)).reshape(n, ho, wo, cout)
            return y, (xs_, x.shape)
        ho, ph0, ph1 = same_padding(h, k, s)
        wo, pw0, pw1 = same_padding(wd, k, s)
        xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
        cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j, :] = xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
        y = (cols.reshape(-1, k * k * c) @ w.reshape(k * k * c, cout)).reshape(n, ho, wo, cout)
        return y, (cols, x.shape, (ph0, pw0), xp.shape)

    def backward(self, gy, cache, p):
        w = p["w"]
        k, s = self.k, self.stride
        cout = w.shape[-1]
        g2 = gy.reshape(-1, cout)
        if k == 1:
            xs_, xshape = cache
            c = xs_.shape[-1]
            gw = (xs_.reshape(-1, c).T @ g2).reshape(w.shape)
            gxs = (g2 @ w.reshape(c, cout).T).reshape(xs_.shape)
            if s > 1:
                gx = np.zeros(xshape, dtype=gy.dtype)
                gx[:, ::s, ::s, :] = gxs
            else:
                gx = gxs
            return [gx], {"w": gw}
        cols, xshape, (ph0, pw0), xpshape = cache
        n, ho, wo = gy.shape[:3]
        c = xshape[-1]
        gw = (cols.reshape(-1, k * k * c).T @ g2).reshape(w.shape)
        gcols = (g2 @ w.reshape(k * k * c, cout).T).reshape(n, ho, wo, k, k, c)
        gxp = np.zeros(xpshape, dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, ph0:ph0 + xshape[1], pw0:pw0 + xshape[2], :]
        return [gx], {"w": gw}


class Conv1x1(Conv2D):
    kind = "conv1x1"

    def __init__(self):
        super().__init__(k=1, stride=1)

    def attrs(self):
        return {}


class DepthwiseConv2D(Op):
    """One k x k filter per channel, 'same' padding. Weights ``(k, k, C)``."""

    kind = "dwconv2d"
    param_roles = ("w",)

    def __init__(self, k: int = 3, stride: int = 1):
        if stride not in (1, 2):
            raise ShapeError(f"dwconv stride must be 1 or 2, got {stride}")
        self.k, self.stride = k, stride

    def attrs(self):
        return {"k": self.k, "stride": self.stride}

    def out_shape(self, in_shapes, param_shapes):
        (h, w, c), = in_shapes
        if param_shapes["w"][-1] != c:
            raise ShapeError(f"dwconv has {param_shapes['w'][-1]} filters for {c} channels")
        return (same_padding(h, self.k, self.stride)[0], same_padding(w, self.k, self.stride)[0], c)

    def forward(self, xs, p, training=False):
        x, = xs
        w = p["w"]
        k, s = self.k, self.stride
        n, h, wd, c = x.shape
        ho, ph0, ph1 = same_padding(h, k, s)
        wo, pw0, pw1 = same_padding(wd, k, s)
        xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
        y = np.zeros((n, ho, wo, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                y += xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] * w[i, j]
        return y, (xp, x.shape, (ph0, pw0))

    def backward(self, gy, cache, p):
        w = p["w"]
        xp, xshape, (ph0, pw0) = cache
        k, s = self.k, self.stride
        ho, wo = gy.shape[1:3]
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
                gw[i, j] = np.einsum("nhwc,nhwc->c", gy, xp[sl])
                gxp[sl] += gy * w[i, j]
        return [gxp[:, ph0:ph0 + xshape[1], pw0:pw0 + xshape[2], :]], {"w": gw}


class FullyConnected(Op):
    kind = "fc"
    param_roles = ("w",)

    def out_shape(self, in_shapes, param_shapes):
        shape, = in_shapes
        if len(shape) != 1:
            raise ShapeError(f"fc expects a vector input, got {shape}")
        d = shape[0]
        din, dout = param_shapes["w"]
        if din != d:
            raise ShapeError(f"fc expects {din} inputs, got {d}")
        return (dout,)

    def forward(self, xs, p, training=False):
        x, = xs
        return x @ p["w"], x

    def backward(self, gy, cache, p):
        x = cache
        return [gy @ p["w"].T], {"w": x.T @ gy}


class BiasAdd(Op):
    kind = "bias_add"
    param_roles = ("b",)

    def out_shape(self, in_shapes, param_shapes):
        shape, = in_shapes
        if param_shapes["b"] != (shape[-1],):
            raise ShapeError(f"bias of shape {param_shapes['b']} for channels {shape[-1]}")
        return shape

    def forward(self, xs, p, training=False):
        return xs[0] + p["b"], None

    def backward(self, gy, cache, p):
        return [gy], {"b": gy.reshape(-1, gy.shape[-1]).sum(axis=0)}


class ReLU(Op):
    kind = "relu"

    def out_shape(self, in_shapes, param_shapes):
        return in_shapes[0]

    def forward(self, xs, p, training=False):
        mask = xs[0] > 0
        return xs[0] * mask, mask

    def backward(self, gy, cache, p):
        return [gy * cache], {}


class BatchNorm(Op):
    """Per-channel normalization. Training mode uses batch statistics."""

    kind = "batch_norm"
    param_roles = ("gamma", "beta", "mean", "var")

    def __init__(self, eps: float = 1e-3, momentum: float = 0.99):
        self.eps, self.momentum = eps, momentum

    def attrs(self):
        return {"eps": self.eps, "momentum": self.momentum}

    def out_shape(self, in_shapes, param_shapes):
        shape, = in_shapes
        for role in self.param_roles:
            if param_shapes[role] != (shape[-1],):
                raise ShapeError(f"batch_norm {role} shape {param_shapes[role]} for channels {shape[-1]}")
        return shape

    def forward(self, xs, p, training=False):
        x, = xs
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
        else:
            mean, var = p["mean"], p["var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        return xhat * p["gamma"] + p["beta"], (xhat, inv, training, mean, var)

    def backward(self, gy, cache, p):
        xhat, inv, training, _, _ = cache
        axes = tuple(range(gy.ndim - 1))
        ggamma = np.sum(gy * xhat, axis=axes)
        gbeta = np.sum(gy, axis=axes)
        gxhat = gy * p["gamma"]
        if training:
            m = gy.size // gy.shape[-1]
            gx = (inv / m) * (m * gxhat - gxhat.sum(axis=axes) - xhat * np.sum(gxhat * xhat, axis=axes))
        else:
            gx = gxhat * inv
        zeros = np.zeros_like(ggamma)
        return [gx], {"gamma": ggamma, "beta": gbeta, "mean": zeros, "var": zeros}


class Add(Op):
    kind = "add"

    def out_shape(self, in_shapes, param_shapes):
        a, b = in_shapes
        if a != b:
            raise ShapeError(f"add needs equal shapes, got {a} and {b}")
        return a

    def forward(self, xs, p, training=False):
        return xs[0] + xs[1], None

    def backward(self, gy, cache, p):
        return [gy, gy], {}


class GlobalAvgPool(Op):
    kind = "global_avg_pool"

    def out_shape(self, in_shapes, param_shapes):
        shape, = in_shapes
        _require_fmap(shape, "global_avg_pool")
        return (shape[-1],)

    def forward(self, xs, p, training=False):
        x, = xs
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, gy, cache, p):
        n, h, w, c = cache
        return [np.broadcast_to(gy[:, None, None, :] / (h * w), cache).copy()], {}


class Reshape(Op):
    kind = "reshape"

    def __init__(self, shape):
        self.shape = tuple(shape)

    def attrs(self):
        return {"shape": list(self.shape)}

    def out_shape(self, in_shapes, param_shapes):
        shape, = in_shapes
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {shape} to {self.shape}")
        return self.shape

    def forward(self, xs, p, training=False):
        x, = xs
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, gy, cache, p):
        return [gy.reshape(cache)], {}


class Concat(Op):
    """Concatenate along the channel (last) axis."""

    kind = "concat"

    def out_shape(self, in_shapes, param_shapes):
        lead = {s[:-1] for s in in_shapes}
        if len(lead) != 1:
            raise ShapeError(f"concat inputs disagree outside the last axis: {in_shapes}")
        return in_shapes[0][:-1] + (sum(s[-1] for s in in_shapes),)

    def forward(self, xs, p, training=False):
        return np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs]

    def backward(self, gy, cache, p):
        splits = np.cumsum(cache)[:-1]
        return list(np.split(gy, splits, axis=-1)), {}


class Subsample(Op):
    """Keep every ``stride``-th pixel; output side ``ceil(side / stride)``."""

    kind = "subsample"

    def __init__(self, stride: int = 2):
        self.stride = stride

    def attrs(self):
        return {"stride": self.stride}

    def out_shape(self, in_shapes, param_shapes):
        (h, w, c), = in_shapes
        s = self.stride
        return (-(-h // s), -(-w // s), c)

    def forward(self, xs, p, training=False):
        x, = xs
        s = self.stride
        return x[:, ::s, ::s, :], x.shape

    def backward(self, gy, cache, p):
        gx = np.zeros(cache, dtype=gy.dtype)
        gx[:, ::self.stride, ::self.stride, :] = gy
        return [gx], {}


OP_KINDS = {
    cls.kind: cls for cls in (Input, Conv2D, Conv1x1, DepthwiseConv2D, FullyConnected, BiasAdd, ReLU,
                              BatchNorm, Add, GlobalAvgPool, Reshape, Concat, Subsample)
}
