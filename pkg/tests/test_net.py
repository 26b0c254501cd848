import numpy as np
import pytest
from helpers import randomize_params

from vrupred.cost import count_params, phase_breakdown
from vrupred.net import (BackboneConfig, BlockSpec, FMNetRegressor, ModelConfig, backbone_graph,
                         build_backbone, build_model, concat_fusion_head, fmnet_block,
                         learned_color_layer, mnv2_block, predict_trajectory, spatial_fusion)
from vrupred.raster import RasterConfig
from vrupred.tensor import Graph, GraphError

TABLE1 = [
    ("input", (300, 300, 3)),
    ("conv", (150, 150, 24)),
    ("dwconv", (75, 75, 24)),
    ("block1", (75, 75, 12)),
    ("block2", (38, 38, 16)),
    ("block3", (19, 19, 32)),
    ("block4", (19, 19, 48)),
    ("block5", (10, 10, 80)),
    ("block6", (10, 10, 160)),
    ("conv1x1", (10, 10, 640)),
    ("gap", (640,)),
]


@pytest.fixture(scope="module")
def fmnet_stages():
    g = Graph()
    x = g.input("raster", (300, 300, 3))
    return g, build_backbone(g, x, BackboneConfig())


@pytest.mark.parametrize("stage,shape", TABLE1)
def test_backbone_matches_architecture_table(fmnet_stages, stage, shape):
    g, stages = fmnet_stages
    assert g.shape(stages[stage]) == shape


def test_backbone_block_repeats(fmnet_stages):
    g, _ = fmnet_stages
    blocks = {n.meta["block"] for n in g.nodes if "block" in n.meta}
    repeats = [sum(b.startswith(f"block{i}_") for b in blocks) for i in range(1, 7)]
    assert repeats == [2, 3, 4, 3, 3, 1]


def test_backbone_rejects_other_input_sizes():
    g = Graph()
    x = g.input("raster", (200, 200, 3))
    with pytest.raises(GraphError, match="300"):
        build_backbone(g, x, BackboneConfig())


def test_halving_width_quarters_parameters():
    ratio = count_params(backbone_graph(BackboneConfig())) / count_params(backbone_graph(BackboneConfig(width=0.5)))
    assert 3.5 < ratio < 4.5


# -- blocks ---------------------------------------------------------------------

def _block_graph(builder, spec, side, name="b"):
    g = Graph()
    x = g.input("x", (side, side, spec.in_channels))
    y = builder(g, x, spec, name=name)
    g.set_outputs(y)
    return g, y


def _zero(g):
    for k, v in g.params.items():
        g.params[k] = np.ones_like(v) if k.endswith(("/var", "/gamma")) else np.zeros_like(v)


def test_zero_mnv2_block_is_identity(rng):
    g, y = _block_graph(mnv2_block, BlockSpec(8, 8, 1, 6, "mnv2"), 9)
    _zero(g)
    x = rng.standard_normal((2, 9, 9, 8)).astype(np.float32)
    assert g.forward({"x": x})[y].tobytes() == x.tobytes()


def test_zero_fmnet_block_is_identity(rng):
    g, y = _block_graph(fmnet_block, BlockSpec.fmnet(16, 16), 9)
    _zero(g)
    x = rng.standard_normal((2, 9, 9, 16)).astype(np.float32)
    assert g.forward({"x": x})[y].tobytes() == x.tobytes()


def test_fresh_fmnet_block_passes_skip_through(rng):
    g, y = _block_graph(fmnet_block, BlockSpec.fmnet(16, 16), 9)
    x = rng.standard_normal((1, 9, 9, 16)).astype(np.float32)
    assert g.forward({"x": x})[y].tobytes() == x.tobytes()


def test_zero_strided_fmnet_block_subsamples(rng):
    g, y = _block_graph(fmnet_block, BlockSpec.fmnet(16, 16, stride=2), 9)
    _zero(g)
    x = rng.standard_normal((2, 9, 9, 16)).astype(np.float32)
    out = g.forward({"x": x})[y]
    assert out.shape == (2, 5, 5, 16)
    assert out.tobytes() == np.ascontiguousarray(x[:, ::2, ::2]).tobytes()


def test_block_shapes_at_strided_transition():
    g, y = _block_graph(mnv2_block, BlockSpec(12, 12, 2, 6, "mnv2"), 75)
    assert g.shape(y) == (38, 38, 12)
    g, y = _block_graph(fmnet_block, BlockSpec.fmnet(12, 16, stride=2), 75)
    assert g.shape(y) == (38, 38, 16)


def test_mnv2_block_layout():
    g, _ = _block_graph(mnv2_block, BlockSpec(8, 8, 1, 6, "mnv2"), 5)
    kinds = [n.kind for n in g.nodes[1:]]
    assert kinds == ["conv1x1", "batch_norm", "relu", "dwconv2d", "batch_norm", "relu",
                     "conv1x1", "batch_norm", "add"]
    g, _ = _block_graph(mnv2_block, BlockSpec(8, 12, 2, 6, "mnv2"), 5)
    assert "add" not in [n.kind for n in g.nodes]


def test_fmnet_block_layout():
    g, _ = _block_graph(fmnet_block, BlockSpec.fmnet(8, 12), 5)
    kinds = [n.kind for n in g.nodes[1:]]
    assert kinds == ["dwconv2d", "conv1x1", "relu", "conv1x1", "bias_add", "conv1x1", "add"]
    assert kinds.count("bias_add") == 1
    assert "batch_norm" not in kinds


def test_fmnet_upsampled_phase_holds_only_a_relu():
    g, _ = _block_graph(fmnet_block, BlockSpec.fmnet(12, 12), 75)
    kinds = phase_breakdown(g)["upsampled"].kinds
    assert [k for k in kinds if not k.startswith("conv")] == ["relu"]


def test_fmnet_upsampled_phase_moves_less_memory_than_mnv2():
    fm, _ = _block_graph(fmnet_block, BlockSpec.fmnet(12, 12), 75)
    mn, _ = _block_graph(mnv2_block, BlockSpec(12, 12, 1, 6, "mnv2"), 75)
    up_fm, up_mn = phase_breakdown(fm)["upsampled"], phase_breakdown(mn)["upsampled"]
    assert up_mn.mac_bytes > 3 * up_fm.mac_bytes
    # the bottleneck phases touch about the same memory
    bot_fm, bot_mn = phase_breakdown(fm)["bottleneck"], phase_breakdown(mn)["bottleneck"]
    assert bot_fm.mac_bytes == pytest.approx(bot_mn.mac_bytes, rel=0.05)


@pytest.mark.parametrize("kw", [dict(stride=3), dict(k=0), dict(variant="fmnet", stride=2),
                                dict(variant="fmnet_strided", stride=1), dict(variant="resnet")])
def test_block_spec_validation(kw):
    with pytest.raises(ValueError):
        BlockSpec(8, 8, **kw)


def test_block_channel_mismatch():
    g = Graph()
    x = g.input("x", (5, 5, 7))
    with pytest.raises(GraphError, match="8"):
        fmnet_block(g, x, BlockSpec.fmnet(8, 8))


# -- heads and fusion -------------------------------------------------------------

def test_concat_head_shape_and_parameter_count():
    g = Graph()
    emb, aux = g.input("emb", (640,)), g.input("aux", (384,))
    y = concat_fusion_head(g, emb, aux, horizon=60)
    assert g.shape(y) == (120,)
    assert count_params(g) == (1024 * 4096 + 4096) + (4096 * 120 + 120)


def _tiny(fusion="spatial", learned=False, seed=0, aux=5, horizon=4):
    mode = "multichannel_binary" if learned else "manual_rgb"
    cfg = ModelConfig(raster=RasterConfig(n=20, resolution=0.5, color_mode=mode), aux_dim=aux, horizon=horizon,
                      fusion=fusion, learned_colors=learned, concat_hidden=32)
    return cfg, build_model(cfg, seed)


@pytest.mark.parametrize("fusion", ["concat", "spatial"])
def test_zero_weights_predict_standing_still(fusion, rng):
    cfg, g = _tiny(fusion)
    for k, v in g.params.items():
        g.params[k] = np.zeros_like(v)
    out = predict_trajectory(g, rng.uniform(0, 1, (3, 20, 20, 3)), rng.standard_normal((3, 5)))
    assert out.shape == (3, 4, 2)
    assert not out.any()


@pytest.mark.parametrize("fusion", ["concat", "spatial"])
def test_untrained_model_predicts_standing_still(fusion, rng):
    _, g = _tiny(fusion)
    out = predict_trajectory(g, rng.uniform(0, 1, (2, 20, 20, 3)), rng.standard_normal((2, 5)))
    assert not out.any()


def test_prediction_is_deterministic(rng):
    _, g = _tiny("spatial")
    randomize_params(g, rng)
    r, a = rng.uniform(0, 1, (4, 20, 20, 3)), rng.standard_normal((4, 5))
    first = predict_trajectory(g, r, a)
    assert first.any()
    assert predict_trajectory(g, r, a).tobytes() == first.tobytes()
    _, g2 = _tiny("spatial")
    g2.set_params(g.params)
    assert predict_trajectory(g2, r, a).tobytes() == first.tobytes()


@pytest.mark.parametrize("a", [5, 384])
def test_spatial_fusion_keeps_feature_map_and_is_additive_identity_at_zero_aux(a, rng):
    g = Graph()
    aux = g.input("aux", (a,))
    fmap = g.input("fmap", (19, 19, 32))
    y = spatial_fusion(g, aux, fmap, expected=(19, 19, 32))
    g.set_outputs(y)
    assert g.shape(y) == (19, 19, 32)
    f = rng.standard_normal((2, 19, 19, 32)).astype(np.float32)
    out = g.forward({"aux": np.zeros((2, a)), "fmap": f})[y]
    assert out.tobytes() == f.tobytes()


def test_spatial_fusion_rejects_wrong_feature_map():
    g = Graph()
    aux, fmap = g.input("aux", (5,)), g.input("fmap", (10, 10, 32))
    with pytest.raises(GraphError, match="19"):
        spatial_fusion(g, aux, fmap, expected=(19, 19, 32))


def test_spatial_fusion_attaches_after_block3():
    cfg = ModelConfig.full_scale("spatial")
    g = build_model(cfg)
    add = g.node("spatial_fusion/add")
    assert add.shape == (19, 19, 32)
    assert add.inputs[0].startswith("block3_3/")


def test_aux_gradient_is_nonzero_with_spatial_fusion(rng):
    _, g = _tiny("spatial")
    randomize_params(g, rng)
    tr = g.run({"raster": rng.uniform(0, 1, (2, 20, 20, 3)), "aux": rng.standard_normal((2, 5))}, dtype=np.float64)
    tr.backward(rng.standard_normal((2, 8)))
    assert np.abs(tr.input_grads["aux"]).max() > 1e-6


def test_learned_color_identity_is_passthrough(rng):
    g = Graph()
    x = g.input("x", (6, 6, 3))
    y = learned_color_layer(g, x)
    g.set_outputs(y)
    g.set_params({"color/color_conv/w": np.eye(3).reshape(1, 1, 3, 3)})
    v = rng.uniform(0, 1, (2, 6, 6, 3)).astype(np.float32)
    assert g.forward({"x": v})[y].tobytes() == v.tobytes()


@pytest.mark.parametrize("channels", [3, 11, 20])
def test_learned_color_output_is_rgb_shaped(channels):
    g = Graph()
    y = learned_color_layer(g, g.input("x", (300, 300, channels)))
    assert g.shape(y) == (300, 300, 3)


def test_learned_color_layer_receives_gradient(rng):
    cfg, g = _tiny("spatial", learned=True)
    assert cfg.input_channels > 3
    randomize_params(g, rng)
    tr = g.run({"raster": rng.integers(0, 2, (2, 20, 20, cfg.input_channels)), "aux": rng.standard_normal((2, 5))},
               dtype=np.float64)
    grads = tr.backward(rng.standard_normal((2, 8)))
    assert np.abs(grads["color/color_conv/w"]).max() > 1e-6
    assert "color/color_conv/w" in g.trainable_params()


def test_model_config_round_trip():
    cfg = ModelConfig.full_scale("spatial")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_model_config_validation():
    with pytest.raises(ValueError, match="fusion"):
        ModelConfig(fusion="late")
    with pytest.raises(ValueError, match="learned_colors"):
        ModelConfig(learned_colors=True)
    with pytest.raises(ValueError, match="backbone"):
        ModelConfig(raster=RasterConfig(n=64), backbone=BackboneConfig())


# -- estimator persistence -----------------------------------------------------------

def _fit_small(fusion, rng, tmp_path=None):
    X = (rng.uniform(0, 1, (6, 20, 20, 3)).astype(np.float32), rng.standard_normal((6, 5)).astype(np.float32))
    y = rng.standard_normal((6, 4, 2)).astype(np.float32)
    est = FMNetRegressor(fusion=fusion, concat_hidden=32, batch_size=3, max_iter=3, lr0=1e-3).fit(X, y)
    return est, X, y


def test_save_load_is_byte_identical(tmp_path, rng):
    est, X, _ = _fit_small("spatial", rng)
    path = est.save(tmp_path / "m.ckpt")
    back = FMNetRegressor.load(path)
    for k, v in est.graph_.params.items():
        assert back.graph_.params[k].tobytes() == v.tobytes()
    assert back.aux_mean_.tobytes() == est.aux_mean_.tobytes()
    assert back.predict(X).tobytes() == est.predict(X).tobytes()
    again = back.save(tmp_path / "again.ckpt")
    assert again.read_bytes() == path.read_bytes()


def test_strict_warm_start_rejects_other_fusion(tmp_path, rng):
    spatial, _, _ = _fit_small("spatial", rng)
    path = spatial.save(tmp_path / "s.ckpt")
    concat, _, _ = _fit_small("concat", rng)
    with pytest.raises(GraphError, match="different graph"):
        concat.warm_start(path, strict=True)


def test_lenient_warm_start_reports_mismatches(tmp_path, rng):
    spatial, _, _ = _fit_small("spatial", rng)
    path = spatial.save(tmp_path / "s.ckpt")
    concat, _, _ = _fit_small("concat", rng)
    before = concat.graph_.get_params()
    report = concat.warm_start(path, strict=False)
    assert report["loaded"] > 0
    assert any(m.startswith("spatial_fusion/") for m in report["mismatched"])
    assert any(m.startswith("concat_fusion/") for m in report["missing"])
    for name in report["missing"]:
        assert concat.graph_.params[name].tobytes() == before[name].tobytes()
    w = "block1_0/expand/w"
    assert concat.graph_.params[w].tobytes() == spatial.graph_.params[w].tobytes()


def test_regressor_rejects_bad_targets(rng):
    X = (rng.uniform(0, 1, (4, 20, 20, 3)), rng.standard_normal((4, 5)))
    with pytest.raises(ValueError, match="targets"):
        FMNetRegressor(max_iter=1).fit(X, np.zeros((4, 8)))
    y = np.zeros((4, 3, 2))
    y[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        FMNetRegressor(max_iter=1).fit(X, y)


def test_predict_checks_aux_width(rng):
    est, X, _ = _fit_small("spatial", rng)
    with pytest.raises(ValueError, match="aux"):
        est.predict((X[0], np.zeros((6, 7), np.float32)))


# -- training experiments --------------------------------------------------------------

FAST = {"batch_size": 32, "lr0": 1e-3, "lr_decay": 0.5, "lr_decay_steps": 200}


@pytest.mark.slow
def test_straight_walkers_are_learned():
    from vrupred.net import targets
    from vrupred.trainer.evaluate import make_examples, make_pipeline, split_by_actor
    from vrupred.trainer.scenarios import ScenarioSpec, simulate

    examples = make_examples(simulate(ScenarioSpec(straight_walkers=20), 0), 30, 3)
    train, _, test = split_by_actor(examples, 0)
    pipe = make_pipeline({}, {**FAST, "max_iter": 600})
    pipe.fit(train, targets(train))
    assert -pipe.score(test, targets(test)) < 0.1


@pytest.mark.slow
def test_vehicle_pretraining_speeds_up_bicyclist_fine_tuning(tmp_path):
    from vrupred.net import targets
    from vrupred.trainer.evaluate import make_examples, make_pipeline
    from vrupred.trainer.scenarios import ScenarioSpec, simulate

    vehicles = make_examples(simulate(ScenarioSpec(vehicles=30), 1), 30, 3)
    pre = make_pipeline({}, {**FAST, "max_iter": 400}).fit(vehicles, targets(vehicles))
    ckpt = pre[-1].save(tmp_path / "vehicles.ckpt")

    bikes = make_examples(simulate(ScenarioSpec(turning_bicyclists=12), 2), 30, 3)
    steps = {}
    for name, source in (("cold", None), ("warm", ckpt)):
        pipe = make_pipeline({}, {**FAST, "max_iter": 300, "warm_start_from": source})
        pipe.fit(bikes, targets(bikes))
        smooth = np.convolve(pipe[-1].loss_curve_, np.ones(20) / 20, "valid")
        reached = np.flatnonzero(smooth <= 0.6)
        steps[name] = int(reached[0]) if reached.size else len(smooth)
    assert steps["warm"] < steps["cold"], steps
