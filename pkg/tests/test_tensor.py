import numpy as np
import pytest
from helpers import OP_CASES, op_case, randomize_params

from vrupred.tensor import (CheckpointError, Graph, GraphError, load_checkpoint, same_padding,
                            save_checkpoint)
from vrupred.tensor.gradcheck import check_gradients
from vrupred.tensor.init import truncated_normal


def _single(build, shape, batch=1):
    g = Graph()
    x = g.input("x", shape)
    g.set_outputs(build(g, x))
    return g


# -- forward examples ---------------------------------------------------------

def test_identity_pointwise_conv_is_identity(rng):
    g = Graph()
    x = g.input("x", (5, 4, 6))
    y = g.conv1x1(x, 6, init=np.eye(6, dtype=np.float32).reshape(1, 1, 6, 6))
    y = g.bias_add(y)
    g.set_outputs(y)
    v = rng.standard_normal((2, 5, 4, 6)).astype(np.float32)
    np.testing.assert_array_equal(g.forward({"x": v})[y], v)


def test_all_ones_kernel_center_is_sum_of_inputs():
    g = _single(lambda g, x: g.conv2d(x, 1, init=np.ones((3, 3, 1, 1), np.float32)), (3, 3, 1))
    v = np.arange(1, 10, dtype=np.float32).reshape(1, 3, 3, 1)
    out = g.forward({"x": v})[g.outputs[0]]
    assert out.shape == (1, 3, 3, 1)
    assert out[0, 1, 1, 0] == 45.0
    # zero padding: the corner only sees a 2x2 patch
    assert out[0, 0, 0, 0] == 1 + 2 + 4 + 5


def test_global_avg_pool_of_constant():
    g = _single(lambda g, x: g.global_avg_pool(x), (7, 3, 4))
    out = g.forward({"x": np.full((2, 7, 3, 4), 2.5)})[g.outputs[0]]
    np.testing.assert_allclose(out, np.full((2, 4), 2.5))


def test_table_shape_examples():
    g = Graph()
    a = g.input("a", (75, 75, 24))
    assert g.shape(g.dwconv2d(a, stride=2)) == (38, 38, 24)
    b = g.input("b", (300, 300, 3))
    assert g.shape(g.conv2d(b, 24, stride=2)) == (150, 150, 24)
    c = g.input("c", (19, 19, 8))
    assert g.shape(g.conv2d(c, 8, stride=2)) == (10, 10, 8)


@pytest.mark.parametrize("size,stride,out", [(75, 2, 38), (19, 2, 10), (150, 2, 75), (10, 1, 10), (1, 2, 1)])
def test_same_padding_uses_ceiling_division(size, stride, out):
    o, before, after = same_padding(size, 3, stride)
    assert o == out
    assert before >= 0 and after >= 0
    assert (o - 1) * stride + 3 <= size + before + after


def test_identity_center_dwconv(rng):
    w = np.zeros((3, 3, 4), np.float32)
    w[1, 1, :] = 1.0
    g = _single(lambda g, x: g.dwconv2d(x, init=w), (6, 5, 4))
    v = rng.standard_normal((3, 6, 5, 4)).astype(np.float32)
    np.testing.assert_array_equal(g.forward({"x": v})[g.outputs[0]], v)


def test_dwconv_filters_do_not_mix_channels(rng):
    w = np.zeros((3, 3, 2), np.float32)
    w[:, :, 0] = 1.0
    g = _single(lambda g, x: g.dwconv2d(x, init=w), (4, 4, 2))
    v = rng.standard_normal((1, 4, 4, 2)).astype(np.float32)
    out = g.forward({"x": v})[g.outputs[0]]
    assert np.all(out[..., 1] == 0)
    assert out[0, 1, 1, 0] == pytest.approx(v[0, :3, :3, 0].sum(), rel=1e-6)


def test_subsample_keeps_every_other_pixel(rng):
    g = _single(lambda g, x: g.subsample(x, 2), (5, 4, 1))
    v = rng.standard_normal((1, 5, 4, 1))
    np.testing.assert_array_equal(g.forward({"x": v})[g.outputs[0]], v[:, ::2, ::2].astype(np.float32))


# -- backward examples --------------------------------------------------------

def test_fc_weight_gradient_is_outer_product_with_ones(rng):
    g = _single(lambda g, x: g.fc(x, 3), (4,))
    v = rng.standard_normal((1, 4))
    out = g.forward({"x": v}, dtype=np.float64)[g.outputs[0]]
    grads = g.backward(np.ones_like(out))
    w = g.node(g.outputs[0]).params["w"]
    np.testing.assert_allclose(grads[w], np.outer(v[0], np.ones(3)), rtol=1e-6)


def test_relu_blocks_gradient_at_negative_preactivation():
    g = _single(lambda g, x: g.relu(x), (4,))
    g.forward({"x": np.array([[-2.0, -0.1, 0.3, 5.0]])}, dtype=np.float64)
    trace = g._last_trace
    trace.backward(np.ones((1, 4)))
    np.testing.assert_array_equal(trace.input_grads["x"], [[0.0, 0.0, 1.0, 1.0]])


def test_backward_before_forward_raises():
    g = _single(lambda g, x: g.relu(x), (3,))
    with pytest.raises(GraphError, match="before forward"):
        g.backward(np.ones((1, 3)))


def test_unused_parameter_gets_zero_gradient(rng):
    g = Graph()
    x = g.input("x", (3,))
    used = g.fc(x, 2, name="used")
    g.fc(x, 2, name="dead")
    g.set_outputs(used)
    g.forward({"x": rng.standard_normal((2, 3))})
    grads = g.backward(np.ones((2, 2), np.float32))
    assert set(grads) == set(g.params)
    assert not grads["dead/w"].any()
    assert grads["used/w"].any()


def test_gradient_shape_mismatch_raises():
    g = _single(lambda g, x: g.relu(x), (3,))
    g.forward({"x": np.ones((2, 3))})
    with pytest.raises(GraphError, match="shape"):
        g.backward(np.ones((2, 4)))


# -- finite differences ---------------------------------------------------------

@pytest.mark.parametrize("kind", OP_CASES)
def test_op_gradients_match_finite_differences(kind):
    worst32 = worst64 = 0.0
    for seed in range(100):
        g, x, training = op_case(kind, np.random.default_rng(seed))
        r32 = check_gradients(g, x, dtype=np.float32, eps=1e-3, coords=None, training=training, seed=seed)
        r64 = check_gradients(g, x, dtype=np.float64, eps=1e-6, coords=None, training=training, seed=seed)
        worst32, worst64 = max(worst32, r32.max_error), max(worst64, r64.max_error)
    assert worst32 <= 1e-2
    assert worst64 <= 1e-5


def test_gradcheck_detects_a_wrong_backward(monkeypatch):
    from vrupred.tensor import ops

    g, x, _ = op_case("fc", np.random.default_rng(0))
    original = ops.FullyConnected.backward

    def wrong(self, gy, cache, p):
        gxs, gps = original(self, gy, cache, p)
        return gxs, {"w": 1.1 * gps["w"]}

    monkeypatch.setattr(ops.FullyConnected, "backward", wrong)
    assert check_gradients(g, x, coords=None).max_error > 1e-2


def test_single_precision_gradients_against_double_reference(monkeypatch):
    from vrupred.tensor import ops

    g, x, _ = op_case("conv2d", np.random.default_rng(3))
    res = check_gradients(g, x, dtype=np.float32, eps=1e-6, coords=None, reference_dtype=np.float64)
    assert res.max_error < 1e-5
    original = ops.Conv2D.backward

    def slightly_wrong(self, gy, cache, p):
        gxs, gps = original(self, gy, cache, p)
        return gxs, {**gps, "w": gps["w"] * 1.01}

    monkeypatch.setattr(ops.Conv2D, "backward", slightly_wrong)
    assert check_gradients(g, x, dtype=np.float32, eps=1e-6, reference_dtype=np.float64).max_error > 5e-3


def test_gradcheck_skips_probes_across_relu_kinks():
    g = _single(lambda g, x: g.relu(x), (3,))
    res = check_gradients(g, {"x": np.array([[1e-8, 0.5, -0.5]])}, eps=1e-6, coords=None)
    assert res.skipped == 1
    assert res.max_error < 1e-8


# -- errors ---------------------------------------------------------------------

def test_channel_mismatch_names_the_node():
    g = Graph()
    x = g.input("x", (4, 4, 3))
    with pytest.raises(GraphError, match="stem"):
        g.add(g.node(g.conv2d(x, 2)).op, [x], {"w": np.zeros((3, 3, 5, 2))}, name="stem")


def test_add_shape_mismatch():
    g = Graph()
    a, b = g.input("a", (4, 4, 3)), g.input("b", (4, 4, 2))
    with pytest.raises(GraphError, match="add"):
        g.add_(a, b)


def test_batch_norm_channel_mismatch():
    from vrupred.tensor.ops import BatchNorm

    g = Graph()
    x = g.input("x", (2, 2, 3))
    p = {k: np.ones(4) for k in ("gamma", "beta", "mean", "var")}
    with pytest.raises(GraphError, match="channels"):
        g.add(BatchNorm(), [x], p)


def test_reshape_count_mismatch():
    g = Graph()
    x = g.input("x", (2, 2, 3))
    with pytest.raises(GraphError, match="reshape"):
        g.reshape(x, (13,))


def test_wrong_input_shape_raises():
    g = _single(lambda g, x: g.relu(x), (3,))
    with pytest.raises(GraphError, match="'x'"):
        g.forward({"x": np.ones((2, 4))})
    with pytest.raises(GraphError, match="missing"):
        g.forward({})


def test_unknown_input_node():
    g = Graph()
    with pytest.raises(GraphError, match="unknown input"):
        g.relu("nope")


def test_unreachable_node_fails_validation():
    from vrupred.tensor.ops import Input

    g = Graph()
    g.input("x", (3,))
    # a node whose only ancestor is detached from the declared inputs
    g.nodes.append(g.node("x").__class__("orphan", Input((3,)), (), {}, (3,)))
    g._index["orphan"] = len(g.nodes) - 1
    g.relu("orphan")
    with pytest.raises(GraphError, match="reachable"):
        g.validate()


# -- determinism, batch norm ------------------------------------------------------

def test_forward_is_byte_identical_across_calls(rng):
    g, x, _ = op_case("conv2d", rng)
    a = g.forward(x)[g.outputs[0]].tobytes()
    b = g.forward(x)[g.outputs[0]].tobytes()
    assert a == b


def test_batch_norm_inference_uses_stored_statistics(rng):
    g = _single(lambda g, x: g.batch_norm(x), (2, 2, 2))
    g.set_params({"batch_norm/mean": [1.0, -1.0], "batch_norm/var": [4.0, 0.25]})
    v = rng.standard_normal((5, 2, 2, 2))
    out = g.forward({"x": v}, dtype=np.float64)[g.outputs[0]]
    expect = (v - [1.0, -1.0]) / np.sqrt(np.array([4.0, 0.25]) + 1e-3)
    np.testing.assert_allclose(out, expect, rtol=1e-6)


def test_batch_norm_training_uses_batch_statistics_and_momentum(rng):
    g = _single(lambda g, x: g.batch_norm(x), (3, 3, 2))
    v = rng.normal(2.0, 3.0, (4, 3, 3, 2))
    trace = g.run({"x": v}, training=True, dtype=np.float64)
    out = trace.values[g.outputs[0]]
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), v.var(axis=(0, 1, 2)) / (v.var(axis=(0, 1, 2)) + 1e-3))
    upd = trace.batch_norm_updates()
    np.testing.assert_allclose(upd["batch_norm/mean"], 0.01 * v.mean(axis=(0, 1, 2)), rtol=1e-5)
    np.testing.assert_allclose(upd["batch_norm/var"], 0.99 + 0.01 * v.var(axis=(0, 1, 2)), rtol=1e-5)
    assert g.run({"x": v}).batch_norm_updates() == {}


# -- initialization -------------------------------------------------------------

def test_truncated_normal_bounds_and_spread():
    v = truncated_normal(np.random.default_rng(0), (200_000,), std=0.5)
    assert np.abs(v).max() <= 1.0
    assert 0.4 < v.std() < 0.5


def test_he_init_is_seeded():
    def build(seed):
        g = Graph(seed=seed)
        g.conv2d(g.input("x", (4, 4, 3)), 8)
        return g.params["conv2d/w"]

    np.testing.assert_array_equal(build(3), build(3))
    assert not np.array_equal(build(3), build(4))
    w = build(0)
    assert abs(w.std() - np.sqrt(2 / 27)) < 0.3 * np.sqrt(2 / 27)


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    g, _, _ = op_case("batch_norm", rng)
    randomize_params(g, rng)
    path = save_checkpoint(tmp_path / "w.ckpt", g.params, g.fingerprint())
    fp, tensors = load_checkpoint(path)
    assert fp == g.fingerprint()
    assert list(tensors) == list(g.params)
    for k in g.params:
        assert tensors[k].dtype == np.float32
        np.testing.assert_array_equal(tensors[k], g.params[k])


def test_checkpoint_layout_is_little_endian_f32(tmp_path):
    import struct

    path = save_checkpoint(tmp_path / "w.ckpt", {"a": np.array([1.0, -2.0], np.float32)}, "00" * 32)
    raw = path.read_bytes()
    assert raw[:8] == b"VRUCKPT\0"
    assert struct.unpack_from("<I", raw, 8)[0] == 1
    assert struct.unpack_from("<I", raw, 44)[0] == 1
    assert raw[-8:] == struct.pack("<2f", 1.0, -2.0)


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXXXXXX" + b[8:], "not a checkpoint"),
    (lambda b: b[:8] + (9).to_bytes(4, "little") + b[12:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_checkpoint_corruption_is_reported(tmp_path, mutate, match):
    path = save_checkpoint(tmp_path / "w.ckpt", {"a": np.ones((2, 3), np.float32)}, "ab" * 32)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(path)


def test_fingerprint_tracks_structure_not_values(rng):
    def build(cout):
        g = Graph()
        g.set_outputs(g.conv2d(g.input("x", (4, 4, 3)), cout))
        return g

    a, b = build(8), build(8)
    randomize_params(b, rng)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != build(9).fingerprint()


def test_set_params_validates():
    g = _single(lambda g, x: g.fc(x, 2), (3,))
    with pytest.raises(GraphError, match="unknown"):
        g.set_params({"nope": np.zeros(1)})
    with pytest.raises(GraphError, match="shape"):
        g.set_params({"fc/w": np.zeros((2, 3))})
