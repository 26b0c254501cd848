"""``vrupred`` command-line interface.

Every command resolves its configuration as flags > ``--config`` file > defaults,
and commands that write files put a ``manifest.json`` next to their outputs.
A manifest can be passed back through ``--config`` to rerun the command.
Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

logger = logging.getLogger("vrupred")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

VARIANTS = {
    "mnv2-concat": ("concat", "mnv2"),
    "fmnet-concat": ("concat", "fmnet"),
    "fmnet-spatial": ("spatial", "fmnet"),
}

RASTER_DEFAULTS = {"n": 64, "resolution": 0.5, "rotate": True, "lane_heading": True,
                   "traffic_lights": True, "color_mode": "manual_rgb"}
DATA_DEFAULTS = {"data": None, "horizon": 30, "stride": 3, "split_seed": 0}
TRAIN_DEFAULTS = {"fusion": "spatial", "arch": "fmnet", "max_iter": 1500, "batch_size": 32, "lr0": 1e-3,
                  "lr_decay": 0.5, "lr_decay_steps": 500, "warm_start": None, "warm_start_strict": True}

DEFAULTS = {
    "generate": {"turning_bicyclists": 64, "light_pairs": 32, "straight_walkers": 0,
                 "crossing_pedestrians": 0, "vehicles": 0, "noise_std": 0.0,
                 "episode_seconds": 14.0, "gap_seconds": 2.0},
    "rasterize": {"map": None, "tracks": None, "lights": None, "actor_id": None, "time": None,
                  **RASTER_DEFAULTS, "n": 300, "resolution": 0.2},
    "train": {**DATA_DEFAULTS, **RASTER_DEFAULTS, **TRAIN_DEFAULTS},
    "evaluate": {**DATA_DEFAULTS, "model": None, "baseline": None, "split": "test"},
    "ablate": {**DATA_DEFAULTS, **RASTER_DEFAULTS, **TRAIN_DEFAULTS, "grid": None, "resolutions": None,
               "axes": None, "include_ukf": False, "split": "test"},
    "analyze": {"variants": list(VARIANTS), "model_config": None, "exclude_fusion": False, "csv": None},
    "inspect-checkpoint": {"checkpoint": None, "json": False},
}
REQUIRED = {
    "rasterize": ("map", "tracks", "actor_id", "time"),
    "train": ("data",),
    "evaluate": ("data",),
    "ablate": ("data",),
    "inspect-checkpoint": ("checkpoint",),
}
# commands that only print unless --out is given
PRINT_ONLY = {"analyze", "inspect-checkpoint"}
ABLATION_AXES = ("resolution", "rotation", "traffic_lights", "lane_heading", "learned_colors", "warm_start")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# parser


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_common(p: argparse.ArgumentParser, out_help: str) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", metavar="PATH", help="JSON config file or a previous manifest.json")
    g.add_argument("--seed", type=_seed, help="random seed (default 0)")
    g.add_argument("--out", metavar="DIR", help=out_help)
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                   help="log progress to stderr")


def _add_raster(p: argparse.ArgumentParser, n: int, resolution: float) -> None:
    g = p.add_argument_group("raster")
    g.add_argument("--n", type=int, help=f"raster side in pixels (default {n})")
    g.add_argument("--resolution", type=float, help=f"meters per pixel (default {resolution})")
    g.add_argument("--no-rotate", dest="rotate", action="store_false", help="keep the world orientation")
    g.add_argument("--no-lane-heading", dest="lane_heading", action="store_false",
                   help="draw lanes without heading colors")
    g.add_argument("--no-traffic-lights", dest="traffic_lights", action="store_false",
                   help="omit traffic light states")
    g.add_argument("--color-mode", choices=("manual_rgb", "multichannel_binary"),
                   help="RGB raster or one binary channel per layer with a learned color layer")


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", metavar="DIR", help="scenario directory written by 'generate'")
    g.add_argument("--horizon", type=int, help="future steps per example (default 30)")
    g.add_argument("--stride", type=int, help="window stride in steps (default 3)")
    g.add_argument("--split-seed", type=int, help="seed of the 80/10/10 split by actor (default 0)")


def _add_training(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and training")
    g.add_argument("--fusion", choices=("spatial", "concat"), help="aux feature fusion (default spatial)")
    g.add_argument("--arch", choices=("fmnet", "mnv2"), help="backbone (default fmnet)")
    g.add_argument("--max-iter", type=int, help="training iterations (default 1500)")
    g.add_argument("--batch-size", type=int, help="examples per iteration (default 32)")
    g.add_argument("--lr0", type=float, help="initial learning rate (default 1e-3)")
    g.add_argument("--lr-decay", type=float, help="learning rate factor per decay period (default 0.5)")
    g.add_argument("--lr-decay-steps", type=int, help="decay period in iterations (default 500)")
    g.add_argument("--warm-start", metavar="CKPT", help="initialize from a checkpoint")
    g.add_argument("--lenient-warm-start", dest="warm_start_strict", action="store_false",
                   help="load only parameters whose name and shape match")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrupred", description="Raster-based trajectory prediction for vulnerable road users.",
        argument_default=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", help="simulate scripted scenarios on the demo intersection",
                       argument_default=argparse.SUPPRESS)
    _add_common(p, "output directory (default out)")
    g = p.add_argument_group("scenario")
    for name, kind, text in (
        ("straight-walkers", int, "constant-velocity pedestrians on sidewalks"),
        ("crossing-pedestrians", int, "pedestrians crossing at crosswalks"),
        ("turning-bicyclists", int, "bicyclists turning left or right (default 64)"),
        ("light-pairs", int, "red-light bicyclists with a green-light twin (default 32)"),
        ("vehicles", int, "vehicles driving straight through"),
        ("noise-std", float, "observation noise in meters"),
        ("episode-seconds", float, "length of each episode"),
        ("gap-seconds", float, "idle time between episodes"),
    ):
        g.add_argument(f"--{name}", type=kind, help=text)

    p = sub.add_parser("rasterize", help="render one actor's raster to PNG", argument_default=argparse.SUPPRESS)
    _add_common(p, "output directory (default out)")
    g = p.add_argument_group("input")
    g.add_argument("--map", metavar="PATH", help="map JSON")
    g.add_argument("--tracks", metavar="PATH", help="track log (JSON lines)")
    g.add_argument("--lights", metavar="PATH", help="traffic light log (JSON lines)")
    g.add_argument("--actor-id", help="target actor")
    g.add_argument("--time", type=float, help="timestamp in seconds")
    _add_raster(p, 300, 0.2)

    p = sub.add_parser("train", help="train a model on a scenario directory", argument_default=argparse.SUPPRESS)
    _add_common(p, "output directory (default out)")
    _add_data(p)
    _add_raster(p, 64, 0.5)
    _add_training(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or the UKF baseline",
                       argument_default=argparse.SUPPRESS)
    _add_common(p, "output directory (default out)")
    _add_data(p)
    g = p.add_argument_group("model")
    g.add_argument("--model", metavar="CKPT", help="checkpoint written by 'train'")
    g.add_argument("--baseline", choices=("ukf",), help="evaluate a non-learned baseline instead")
    g.add_argument("--split", choices=("train", "val", "test", "all"), help="examples to score (default test)")

    p = sub.add_parser("ablate", help="train and evaluate a grid of configurations",
                       argument_default=argparse.SUPPRESS)
    _add_common(p, "output directory (default out)")
    _add_data(p)
    _add_raster(p, 64, 0.5)
    _add_training(p)
    g = p.add_argument_group("grid")
    g.add_argument("--grid", metavar="PATH",
                   help="JSON list of {name, featurizer, regressor} entries")
    g.add_argument("--resolutions", type=_csv_floats, help="one configuration per resolution, e.g. 0.3,0.5")
    g.add_argument("--axes", type=_csv_list,
                   help=f"full configuration plus one with each axis switched: {','.join(ABLATION_AXES)}")
    g.add_argument("--include-ukf", action="store_true", help="add the UKF baseline rows")
    g.add_argument("--split", choices=("val", "test"), help="evaluation split (default test)")

    p = sub.add_parser("analyze", help="cost table (FLOPS, parameters, MAC, ops) of model variants",
                       argument_default=argparse.SUPPRESS)
    _add_common(p, "write a manifest here (optional)")
    p.add_argument("--variants", type=_csv_list, help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.add_argument("--model-config", metavar="PATH", help="also analyze a model config JSON")
    p.add_argument("--exclude-fusion", action="store_true", help="leave fusion layers out of the totals")
    p.add_argument("--csv", metavar="PATH", help="also write the table as CSV")

    p = sub.add_parser("inspect-checkpoint", help="list the tensors of a checkpoint",
                       argument_default=argparse.SUPPRESS)
    _add_common(p, "write a manifest here (optional)")
    p.add_argument("checkpoint", nargs="?", help="checkpoint path")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    return parser


# ---------------------------------------------------------------------------
# configuration and manifests


def resolve_config(command: str, given: dict) -> tuple[dict, dict]:
    """Merge flags over the config file over defaults; returns ``(config, sources)``."""
    defaults = {**DEFAULTS[command], "seed": 0, "out": None if command in PRINT_ONLY else "out"}
    from_file: dict = {}
    if given.get("config"):
        try:
            doc = json.loads(Path(given["config"]).read_text())
        except FileNotFoundError:
            raise CliError(f"config file not found: {given['config']}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {given['config']}: {exc}") from None
        if isinstance(doc, dict) and "command" in doc and "config" in doc:
            if doc["command"] != command:
                raise CliError(f"manifest is for '{doc['command']}', not '{command}'")
            doc = doc["config"]
        if not isinstance(doc, dict):
            raise CliError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise CliError(f"unknown config keys for '{command}': {', '.join(unknown)}")
        from_file = doc
    flags = {k: v for k, v in given.items() if k in defaults}
    config = {**defaults, **from_file, **flags}
    sources = {k: "flag" if k in flags else "file" if k in from_file else "default" for k in config}
    missing = [k for k in REQUIRED.get(command, ()) if config.get(k) is None]
    if missing:
        raise CliError(f"missing required setting(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")
    return config, sources


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def content_hash(path) -> str:
    """sha256 of a file, or of the sorted ``name  digest`` listing of a directory."""
    path = Path(path)
    if path.is_file():
        return sha256_file(path)
    if not path.is_dir():
        raise CliError(f"input not found: {path}")
    listing = "".join(f"{p.relative_to(path).as_posix()}  {sha256_file(p)}\n"
                      for p in sorted(path.rglob("*")) if p.is_file() and p.name != "manifest.json")
    return hashlib.sha256(listing.encode()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, sources: dict, inputs: dict, outputs) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config["seed"],
        "config": config,
        "config_sources": sources,
        "inputs": {k: {"path": str(v), "sha256": content_hash(v)} for k, v in sorted(inputs.items())},
        "outputs": {Path(p).name: sha256_file(p) for p in sorted(map(str, outputs))},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(config: dict) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _featurizer_params(config: dict) -> dict:
    return {"n": config["n"], "resolution": config["resolution"], "rotated": config["rotate"],
            "encode_lane_heading": config["lane_heading"], "encode_traffic_lights": config["traffic_lights"],
            "color_mode": config["color_mode"]}


def _regressor_params(config: dict) -> dict:
    return {"fusion": config["fusion"], "arch": config["arch"], "max_iter": config["max_iter"],
            "batch_size": config["batch_size"], "lr0": config["lr0"], "lr_decay": config["lr_decay"],
            "lr_decay_steps": config["lr_decay_steps"], "random_state": config["seed"],
            "warm_start_from": config["warm_start"], "warm_start_strict": config["warm_start_strict"]}


def _load_split(config: dict, split: str):
    from .trainer.evaluate import load_scenario_dir, split_by_actor

    if not Path(config["data"], "tracks.jsonl").exists():
        raise CliError(f"{config['data']}: not a scenario directory (no tracks.jsonl)")
    examples = load_scenario_dir(config["data"], config["horizon"], config["stride"])
    if not examples:
        raise CliError(f"{config['data']}: no complete {config['horizon']}-step windows")
    if split == "all":
        return examples
    parts = dict(zip(("train", "val", "test"), split_by_actor(examples, config["split_seed"])))
    if not parts[split]:
        raise CliError(f"the {split} split is empty")
    return parts[split]


# ---------------------------------------------------------------------------
# commands


def cmd_generate(config: dict) -> list:
    from .trainer.scenarios import ScenarioSpec, generate_scenarios

    keys = DEFAULTS["generate"]
    spec = ScenarioSpec.from_dict({k: config[k] for k in keys})
    files = generate_scenarios(spec, config["seed"], _out_dir(config))
    print(f"wrote scenarios to {config['out']}")
    return [files.map, files.tracks, files.lights, files.spec, files.tags], {}


def _example_at(config: dict):
    from .scene import Example, load_map, read_light_log, read_track_log, step_index

    scene_map = load_map(config["map"])
    states = read_track_log(config["tracks"])
    k = step_index(config["time"])
    if not any(s.actor_id == config["actor_id"] for s in states):
        raise CliError(f"unknown actor id {config['actor_id']!r}")
    context = tuple(s for s in states if step_index(s.timestamp) == k)
    target = next((s for s in context if s.actor_id == config["actor_id"]), None)
    if target is None:
        raise CliError(f"actor {config['actor_id']!r} has no observation at t={config['time']}")
    light_states = ()
    if config["lights"]:
        at = read_light_log(config["lights"]).get(k, {})
        light_states = tuple(at.get(i, "unknown") for i in range(len(scene_map.traffic_lights)))
    return Example(target, context, scene_map, np.zeros((0, 2)), light_states=light_states)


def cmd_rasterize(config: dict):
    from .raster import RasterConfig, render

    cfg = RasterConfig(n=config["n"], resolution=config["resolution"], rotated=config["rotate"],
                       encode_lane_heading=config["lane_heading"],
                       encode_traffic_lights=config["traffic_lights"], color_mode=config["color_mode"])
    image = render(_example_at(config), cfg)
    out = _out_dir(config)
    written = image.save_png(out / "raster.png")
    meta = out / "raster.json"
    meta.write_text(json.dumps({"actor_id": config["actor_id"], "time": config["time"],
                                "raster_config": cfg.to_dict(), "target_placement": list(cfg.target_placement),
                                "channels": list(image.channel_names)}, indent=2, sort_keys=True) + "\n")
    for p in written:
        print(p)
    inputs = {"map": config["map"], "tracks": config["tracks"]}
    if config["lights"]:
        inputs["lights"] = config["lights"]
    return [*written, meta], inputs


def cmd_train(config: dict):
    from .net import targets
    from .trainer.evaluate import make_pipeline

    train = _load_split(config, "train")
    pipe = make_pipeline(_featurizer_params(config), _regressor_params(config))
    pipe.fit(train, targets(train))
    out = _out_dir(config)
    ckpt = pipe[-1].save(out / "model.ckpt")
    features = Path(str(ckpt) + ".features.json")
    features.write_text(json.dumps(pipe[0].get_params(), indent=2, sort_keys=True) + "\n")
    curve = out / "loss_curve.csv"
    curve.write_text("iteration,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(pipe[-1].loss_curve_)))
    print(f"trained {pipe[-1].n_iter_} iterations on {len(train)} examples; "
          f"final loss {pipe[-1].loss_curve_[-1]:.4f}; wrote {ckpt}")
    inputs = {"data": config["data"]}
    if config["warm_start"]:
        inputs["warm_start"] = config["warm_start"]
    return [ckpt, Path(str(ckpt) + ".json"), features, curve], inputs


def load_pipeline(ckpt):
    """Featurizer + regressor pipeline from a checkpoint written by ``train``."""
    from sklearn.pipeline import Pipeline

    from .net import ExampleFeaturizer, FMNetRegressor

    features = Path(str(ckpt) + ".features.json")
    if not Path(ckpt).exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    feat = ExampleFeaturizer(**json.loads(features.read_text())) if features.exists() else ExampleFeaturizer()
    return Pipeline([("features", feat), ("model", FMNetRegressor.load(ckpt))])


def _write_report(out: Path, report) -> list:
    csv_path, txt_path = out / "metrics.csv", out / "metrics.txt"
    report.to_csv(csv_path)
    table = report.to_table()
    txt_path.write_text(table + "\n")
    print(table)
    return [csv_path, txt_path]


def cmd_evaluate(config: dict):
    from .baseline import UKFRollout
    from .trainer.evaluate import evaluate

    if bool(config["model"]) == bool(config["baseline"]):
        raise CliError("give exactly one of --model or --baseline")
    examples = _load_split(config, config["split"])
    if config["model"]:
        model, name = load_pipeline(config["model"]), Path(config["model"]).stem
        horizon = model[-1].config_.horizon
        if horizon != config["horizon"]:
            raise CliError(f"model predicts {horizon} steps but --horizon is {config['horizon']}")
    else:
        model, name = UKFRollout(horizon=config["horizon"]), config["baseline"]
    report = evaluate(model, examples, name)
    inputs = {"data": config["data"]}
    if config["model"]:
        inputs["model"] = config["model"]
    return _write_report(_out_dir(config), report), inputs


def ablation_grid(config: dict) -> list:
    """Grid from ``--grid``, ``--resolutions`` or ``--axes`` (in that priority)."""
    from .trainer.evaluate import AblationConfig

    if config["grid"]:
        entries = json.loads(Path(config["grid"]).read_text())
        if not isinstance(entries, list) or not entries:
            raise CliError("grid file must hold a non-empty JSON list")
        try:
            return [AblationConfig(**e) for e in entries]
        except TypeError as exc:
            raise CliError(f"bad grid entry: {exc}") from None
    if config["resolutions"]:
        return [AblationConfig(f"resolution={r:g}", {"resolution": r}) for r in config["resolutions"]]
    grid = [AblationConfig("full")]
    for axis in config["axes"] or ():
        if axis not in ABLATION_AXES:
            raise CliError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")
        if axis == "resolution":
            other = 0.3 if config["resolution"] != 0.3 else 0.5
            grid.append(AblationConfig(f"resolution={other:g}", {"resolution": other}))
        elif axis == "rotation":
            grid.append(AblationConfig("no_rotation", {"rotated": not config["rotate"]}))
        elif axis == "traffic_lights":
            grid.append(AblationConfig("no_traffic_lights", {"encode_traffic_lights": not config["traffic_lights"]}))
        elif axis == "lane_heading":
            grid.append(AblationConfig("no_lane_heading", {"encode_lane_heading": not config["lane_heading"]}))
        elif axis == "learned_colors":
            mode = "multichannel_binary" if config["color_mode"] == "manual_rgb" else "manual_rgb"
            grid.append(AblationConfig(f"colors={mode}", {"color_mode": mode}))
        elif axis == "warm_start":
            if config["warm_start"]:
                grid.append(AblationConfig("cold_start", {}, {"warm_start_from": None}))
            else:
                raise CliError("the warm_start axis needs --warm-start CKPT")
    return grid


def cmd_ablate(config: dict):
    from .trainer.evaluate import make_pipeline, run_ablation

    grid = ablation_grid(config)
    if len({c.name for c in grid}) != len(grid):
        raise CliError("ablation configuration names must be unique")
    train = _load_split(config, "train")
    test = _load_split(config, config["split"])
    base = make_pipeline(_featurizer_params(config), _regressor_params(config))
    report, _ = run_ablation(grid, train, test, base=base, include_ukf=config["include_ukf"])
    inputs = {"data": config["data"]}
    if config["grid"]:
        inputs["grid"] = config["grid"]
    if config["warm_start"]:
        inputs["warm_start"] = config["warm_start"]
    return _write_report(_out_dir(config), report), inputs


def cmd_analyze(config: dict):
    from .cost import analyze, format_table, reports_to_csv
    from .net import ModelConfig, build_model

    unknown = [v for v in config["variants"] if v not in VARIANTS]
    if unknown:
        raise CliError(f"unknown variant(s) {', '.join(unknown)}; choose from {', '.join(VARIANTS)}")
    models = [(v, ModelConfig.full_scale(*VARIANTS[v])) for v in config["variants"]]
    inputs = {}
    if config["model_config"]:
        try:
            models.append((Path(config["model_config"]).stem,
                           ModelConfig.from_dict(json.loads(Path(config["model_config"]).read_text()))))
        except (KeyError, TypeError) as exc:
            raise CliError(f"{config['model_config']}: not a model config ({exc})") from None
        inputs["model_config"] = config["model_config"]
    if not models:
        raise CliError("nothing to analyze")
    reports = [analyze(build_model(cfg, seed=config["seed"]), name, config["exclude_fusion"])
               for name, cfg in models]
    print(format_table(reports))
    written = []
    if config["csv"]:
        reports_to_csv(reports, config["csv"])
        written.append(config["csv"])
    return written, inputs


def cmd_inspect_checkpoint(config: dict):
    from .tensor import load_checkpoint

    fingerprint, tensors = load_checkpoint(config["checkpoint"])
    info = {
        "path": str(config["checkpoint"]),
        "fingerprint": fingerprint,
        "tensors": len(tensors),
        "elements": int(sum(t.size for t in tensors.values())),
        "shapes": {k: list(v.shape) for k, v in sorted(tensors.items())},
    }
    if config["json"]:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        print(f"fingerprint {fingerprint}")
        print(f"{info['tensors']} tensors, {info['elements']} elements")
        for k, shape in info["shapes"].items():
            print(f"  {k}  {tuple(shape)}")
    return [], {"checkpoint": config["checkpoint"]}


COMMANDS = {
    "generate": cmd_generate,
    "rasterize": cmd_rasterize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
    "inspect-checkpoint": cmd_inspect_checkpoint,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    command = args.pop("command")
    logging.basicConfig(level=logging.INFO if args.pop("verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config, sources = resolve_config(command, args)
        outputs, inputs = COMMANDS[command](config)
        if config["out"] is not None:
            write_manifest(_out_dir(config), command, config, sources, inputs, outputs)
        return EXIT_OK
    except CliError as exc:
        print(f"vrupred {command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"vrupred {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        print(f"vrupred {command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
