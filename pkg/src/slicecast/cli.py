"""Command-line entry point: ingest, slices, train, predict, evaluate, policy, replay, pipeline."""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import signal
import sys
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sample
from .estimators import ForecastResult
from .ingest import load_demands, load_topology, topology_to_json
from .models import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .models.config import ConfigError as ModelConfigError
from .policy import PolicyError, PolicyRules, generate_policies, history_from_dict, history_to_dict, render_policy
from .preprocess import align, clean, daily_max, fit_scaler, read_frame_csv, transform, write_frame_csv
from .slicing import form_slices, manifest_dict, route_all, slice_series, slices_from_manifest, to_dot
from .telemetry import ReplayStartupError, serve
from .train_eval import (
    SplitSpec,
    TrainOptions,
    assert_no_leakage,
    evaluate,
    make_windows,
    metrics_to_csv,
    predict_windows,
    predictions_to_csv,
    split,
    train,
)

log = logging.getLogger("slicecast")

OUTPUT_ENV = "SLICECAST_OUTPUT_DIR"
ARTIFACT_VERSION = 1

DEFAULTS: dict = {
    "paths": {"topology": None, "demands": None, "output_dir": "slicecast-out"},
    "preprocess": {"fill": "linear", "aggregate": "daily_max"},
    "slicing": {"theta": 1.0},
    "model": {
        "name": "autoformer",
        "input_len": 8,
        "horizon": 4,
        "label_len": 4,
        "d_model": 16,
        "n_heads": 2,
        "encoder_layers": 2,
        "decoder_layers": 1,
        "moving_avg_kernel": 3,
        "autocorr_factor": 1.0,
        "dropout": 0.0,
    },
    "training": {"epochs": 30, "batch": 8, "lr": 1e-3, "patience": 10},
    "split": {"train": 0.6, "val": 0.2, "test": 0.2},
    "policy": {"upper_util": 0.8, "lower_util": 0.3, "margin": 0.2, "hysteresis": 2, "min_capacity": 1.0, "format": "json"},
    "replay": {"bind": "127.0.0.1:9108", "speedup": 288.0},
    "seed": 0,
}

# artifact file -> producing subcommand
PRODUCERS = {
    "topology.json": "ingest",
    "demands.csv": "ingest",
    "slices.json": "slices",
    "slice_frame.csv": "slices",
    "topology.dot": "slices",
    "model.json": "train",
    "model.bin": "train",
    "train_history.json": "train",
    "forecasts.json": "predict",
    "predictions.csv": "predict",
    "metrics.json": "evaluate",
    "metrics.csv": "evaluate",
    "policy.json": "policy",
    "policy_history.json": "policy",
}


class CLIError(Exception):
    exit_code = 1


class ConfigError(CLIError):
    pass


class DependencyError(CLIError):
    pass


class ValidationFailure(CLIError):
    exit_code = 2


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{where}: unknown config field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Resolved configuration; ``data`` has exactly the shape of :data:`DEFAULTS`."""

    data: dict

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        data = _merge(DEFAULTS, d)
        if base_dir is not None:
            for key in ("topology", "demands"):
                p = data["paths"][key]
                if p is not None and not Path(p).is_absolute():
                    data["paths"][key] = str((base_dir / p).resolve())
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def set(self, dotted: str, value) -> None:
        node = self.data
        *parents, leaf = dotted.split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"{dotted}: unknown config field")
            node = node[p]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ConfigError(f"{dotted}: unknown config field")
        node[leaf] = value

    # -- typed views --

    @property
    def output_dir(self) -> Path:
        return Path(self.data["paths"]["output_dir"])

    def model_config(self, n_series: int) -> ModelConfig:
        m = {k: v for k, v in self.data["model"].items() if k != "name"}
        return ModelConfig(n_series=n_series, seed=self.data["seed"], **m)

    def train_options(self) -> TrainOptions:
        return TrainOptions(seed=self.data["seed"], **self.data["training"])

    def split_spec(self) -> SplitSpec:
        return SplitSpec(**self.data["split"])

    def policy_rules(self) -> PolicyRules:
        return PolicyRules(**{k: v for k, v in self.data["policy"].items() if k != "format"})

    def validate(self) -> None:
        d = self.data
        for key in ("topology", "demands"):
            p = d["paths"][key]
            if p is not None and not Path(p).exists():
                raise ConfigError(f"paths.{key}: {p} does not exist")
        if d["preprocess"]["fill"] not in ("linear", "previous", "nearest"):
            raise ConfigError(f"preprocess.fill: unknown method {d['preprocess']['fill']!r}")
        if d["preprocess"]["aggregate"] not in ("daily_max", "none"):
            raise ConfigError("preprocess.aggregate: must be 'daily_max' or 'none'")
        if not isinstance(d["slicing"]["theta"], (int, float)) or not 0 <= d["slicing"]["theta"] <= 1:
            raise ConfigError("slicing.theta: must be a number in [0, 1]")
        if d["model"]["name"] not in ("autoformer", "pointwise", "persistence"):
            raise ConfigError(f"model.name: unknown model {d['model']['name']!r}")
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed: must be a non-negative integer")
        if d["policy"]["format"] not in ("json", "table"):
            raise ConfigError("policy.format: must be 'json' or 'table'")
        checks = [
            ("model", lambda: self.model_config(1)),
            ("training", self.train_options),
            ("split", self.split_spec),
            ("policy", self.policy_rules),
        ]
        for section, build in checks:
            try:
                build()
            except (ModelConfigError, PolicyError, ValueError, TypeError) as exc:
                raise ConfigError(f"{section}: {_field_hint(str(exc), d[section])}") from None
        t = d["training"]
        for k in ("epochs", "batch", "patience"):
            if not isinstance(t[k], int) or t[k] < (0 if k == "epochs" else 1):
                raise ConfigError(f"training.{k}: must be a positive integer")
        if not t["lr"] > 0:
            raise ConfigError("training.lr: must be > 0")
        if not d["replay"]["speedup"] > 0:
            raise ConfigError("replay.speedup: must be > 0")

    def hash(self) -> str:
        """Digest of everything that shapes the artifacts (not output location or replay)."""
        d = self.to_dict()
        d["paths"].pop("output_dir")
        d.pop("replay")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _field_hint(msg: str, section: dict) -> str:
    # put the offending field name up front when the message mentions one
    for k in section:
        if msg.startswith(k) or f" {k} " in f" {msg} ":
            return f"{k}: {msg}"
    return msg


def default_config_path() -> Path:
    return Path(str(sample.resources.files("slicecast") / "data" / "sample_config.json"))


# ---------------------------------------------------------------------------
# artifacts


class Artifacts:
    def __init__(self, root: Path, config: RunConfig):
        self.root = root
        self.config = config
        self.hash = config.hash()

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, *names: str) -> None:
        for n in names:
            if not self.path(n).exists():
                producer = PRODUCERS[n]
                raise DependencyError(f"missing {n} in {self.root}; run the `{producer}` subcommand first")

    def _manifest(self) -> dict:
        p = self.path("manifest.json")
        return json.loads(p.read_text()) if p.exists() else {"artifact_version": ARTIFACT_VERSION, "artifacts": {}}

    def write(self, name: str, content: str | bytes) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(name)
        if isinstance(content, bytes):
            p.write_bytes(content)
        else:
            p.write_text(content)
        self.register(name)
        return p

    def write_json(self, name: str, payload: dict) -> Path:
        doc = {"artifact_version": ARTIFACT_VERSION, "config_hash": self.hash, **payload}
        return self.write(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def read_json(self, name: str) -> dict:
        self.require(name)
        return json.loads(self.path(name).read_text())

    def register(self, name: str) -> None:
        m = self._manifest()
        digest = hashlib.sha256(self.path(name).read_bytes()).hexdigest()
        m["artifacts"][name] = {"config_hash": self.hash, "producer": PRODUCERS[name], "sha256": digest}
        m["artifacts"] = dict(sorted(m["artifacts"].items()))
        self.path("manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# steps


def _inputs(cfg: RunConfig) -> tuple[Path, Path]:
    net, dem = sample.bundled_paths()
    p = cfg.data["paths"]
    return Path(p["topology"] or net), Path(p["demands"] or dem)


def step_ingest(cfg: RunConfig, art: Artifacts) -> str:
    topo_path, dem_path = _inputs(cfg)
    topo = load_topology(topo_path)
    series = load_demands(dem_path, topo)
    frame = clean(align(series), cfg.data["preprocess"]["fill"])
    gaps = sum(s.gap_count for s in series)
    if cfg.data["preprocess"]["aggregate"] == "daily_max":
        frame = daily_max(frame)
    art.write_json("topology.json", {"topology": json.loads(topology_to_json(topo))})
    write_frame_csv(frame, art.path("demands.csv"))
    art.register("demands.csv")
    return f"ingest: {len(topo.nodes)} nodes, {len(topo.links)} links, {len(series)} demands, {gaps} gaps filled, {frame.n_rows} rows"


def _topology(art: Artifacts):
    from .ingest import topology_from_dict

    return topology_from_dict(art.read_json("topology.json")["topology"])


def step_slices(cfg: RunConfig, art: Artifacts) -> str:
    art.require("topology.json", "demands.csv")
    topo = _topology(art)
    frame = read_frame_csv(art.path("demands.csv"))
    pairs = [tuple(c.split("->")) for c in frame.columns]
    routing = route_all(topo, pairs)
    theta = cfg.data["slicing"]["theta"]
    routes = {p: r for p, r in routing.routes.items() if r.links}
    slices = form_slices(routes, topo, theta)
    art.write_json("slices.json", manifest_dict(slices, routing, theta))
    write_frame_csv(slice_series(slices, frame), art.path("slice_frame.csv"))
    art.register("slice_frame.csv")
    art.write("topology.dot", to_dot(topo, slices))
    return f"slices: {len(slices)} slices from {len(routes)} routed demands ({len(routing.unreachable)} unreachable), theta={theta}"


def _prepared(cfg: RunConfig, art: Artifacts):
    art.require("slices.json", "slice_frame.csv")
    frame = read_frame_csv(art.path("slice_frame.csv"))
    m = cfg.data["model"]
    tr, va, te = split(frame, cfg.split_spec(), m["input_len"], m["horizon"])
    scaler = fit_scaler(tr)
    L, H = m["input_len"], m["horizon"]
    windows = [make_windows(transform(x, scaler), L, H) for x in (tr, va, te)]
    if not windows[0]:
        raise CLIError(f"training split has {tr.n_rows} rows, too few for input_len {L} + horizon {H}")
    assert_no_leakage(tr.timestamps, windows[2])
    return frame, (tr, va, te), scaler, windows


def step_train(cfg: RunConfig, art: Artifacts) -> str:
    frame, parts, scaler, (tw, vw, _) = _prepared(cfg, art)
    model = build_model(cfg.data["model"]["name"], cfg.model_config(len(frame.columns)))
    result = train(model, tw, vw, cfg.train_options())
    extra = {
        "config_hash": art.hash,
        "columns": list(frame.columns),
        "scaler": scaler.to_dict(),
        "split_rows": [p.n_rows for p in parts],
    }
    art.root.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, art.path("model"), extra)
    art.register("model.json")
    art.register("model.bin")
    art.write_json("train_history.json", result.to_dict())
    best = "n/a" if result.best_epoch < 0 else f"{result.best_val:.6g} at epoch {result.best_epoch}"
    return f"train: {model.tag}, {model.num_parameters()} parameters, {len(tw)} train / {len(vw)} val windows, best val MSE {best}"


def _load_model(cfg: RunConfig, art: Artifacts, force: bool = False):
    art.require("model.json", "model.bin")
    model, extra = load_checkpoint(art.path("model.json"))
    if extra.get("config_hash") != art.hash and not force:
        raise CLIError(
            f"checkpoint was produced under config {extra.get('config_hash')}, current config is {art.hash}; "
            "re-run `train` or pass --force"
        )
    return model, extra


def step_predict(cfg: RunConfig, art: Artifacts) -> str:
    frame, _, scaler, (_, _, test_w) = _prepared(cfg, art)
    model, _ = _load_model(cfg, art)
    L = model.config.input_len
    outputs = []
    if test_w:
        x = np.stack([w.context for w in test_w])
        pred = predict_windows(model, x)
        art.write("predictions.csv", predictions_to_csv(test_w, pred, frame.columns, model.tag, scaler))
        outputs.append(f"{len(test_w)} test windows")
    ctx = (frame.values[-L:] - scaler.mean) / scaler.scale
    ahead = predict_windows(model, ctx[None])[0] * scaler.scale + scaler.mean
    at = int(frame.timestamps[-1])
    results = [ForecastResult(c, at, model.config.horizon, ahead[:, j], model.tag) for j, c in enumerate(frame.columns)]
    art.write_json("forecasts.json", {"forecasts": [r.to_dict() for r in results]})
    outputs.append(f"{len(results)} forward forecasts of {model.config.horizon} steps")
    return "predict: " + ", ".join(outputs)


def step_evaluate(cfg: RunConfig, art: Artifacts, force: bool = False) -> str:
    frame, _, scaler, (_, _, test_w) = _prepared(cfg, art)
    if not test_w:
        raise CLIError("test split holds no complete window; enlarge the data or shrink input_len/horizon")
    model, _ = _load_model(cfg, art, force)
    rows = [evaluate(model, test_w, scaler)]
    if model.tag != "persistence":
        rows.append(evaluate(build_model("persistence", model.config), test_w, scaler))
    art.write_json("metrics.json", {"metrics": rows, "forced": bool(force)})
    art.write("metrics.csv", metrics_to_csv(rows))
    head = rows[0]
    return f"evaluate: {head['model']} test MSE {head['mse']:.6g} (scaled), MAE {head['mae']:.6g}, peak_ratio {head['peak_ratio']}"


def step_policy(cfg: RunConfig, art: Artifacts, history_path: str | None = None, fmt: str | None = None) -> str:
    fc_doc = art.read_json("forecasts.json")
    slices = slices_from_manifest(art.read_json("slices.json"))
    try:
        forecasts = [ForecastResult.from_dict(d) for d in fc_doc["forecasts"]]
        history = None
        if history_path:
            hist_doc = json.loads(Path(history_path).read_text())
            history = history_from_dict(hist_doc.get("history", hist_doc))
        actions, new_history = generate_policies(forecasts, slices, cfg.policy_rules(), history)
        fmt = fmt or cfg.data["policy"]["format"]
        at = max((f.issued_at for f in forecasts), default=None)
        text = render_policy(actions, fmt, issued_at=at)
    except (PolicyError, ValueError, KeyError, OSError) as exc:
        raise ValidationFailure(f"policy validation failed: {exc}") from None
    if fmt == "json":
        doc = json.loads(text)
        art.write_json("policy.json", {"policy": doc})
    else:
        art.write_json("policy.json", {"policy_table": text})
    art.write_json("policy_history.json", {"history": history_to_dict(new_history)})
    kinds = {k: sum(a.action == k for a in actions) for k in ("scale-up", "scale-down", "hold")}
    return "policy: " + ", ".join(f"{v} {k}" for k, v in kinds.items())


def step_replay(cfg: RunConfig, art: Artifacts, duration: float | None = None) -> str:
    art.require("slice_frame.csv")
    frame = read_frame_csv(art.path("slice_frame.csv"))
    r = cfg.data["replay"]
    stop = threading.Event()
    try:
        svc = serve(frame, r["bind"], r["speedup"])
    except ReplayStartupError as exc:
        raise CLIError(str(exc)) from None
    previous = {s: signal.signal(s, lambda *_: stop.set()) for s in (signal.SIGINT, signal.SIGTERM)} if threading.current_thread() is threading.main_thread() else {}
    print(f"replay: serving {len(frame.columns)} slices at {svc.url}/metrics (speedup {r['speedup']:g})", flush=True)
    try:
        stop.wait(duration)
    finally:
        svc.stop()
        for s, h in previous.items():
            signal.signal(s, h)
    return "replay: stopped"


PIPELINE = ("ingest", "slices", "train", "predict", "evaluate", "policy")


# ---------------------------------------------------------------------------
# argument parsing


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (default: bundled sample config)")
    common.add_argument("--output-dir", help=f"artifact directory (overrides ${OUTPUT_ENV} and the config file)")
    common.add_argument("--topology", help="SNDlib native topology file")
    common.add_argument("--demands", help="demand snapshot directory or tar archive")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE", help="override any config field, e.g. model.d_model=32")
    common.add_argument("-v", "--verbose", action="store_true")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--model", choices=["autoformer", "pointwise", "persistence"])
    model_flags.add_argument("--input-len", type=int)
    model_flags.add_argument("--horizon", type=int)
    model_flags.add_argument("--epochs", type=int)
    model_flags.add_argument("--lr", type=float)

    p = argparse.ArgumentParser(prog="slicecast", description="Slice-level traffic forecasting and scaling policies.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse topology and demands, fill gaps, aggregate")
    s = sub.add_parser("slices", parents=[common], help="route demands and group them into slices")
    s.add_argument("--theta", type=float, help="Jaccard merge threshold in [0, 1]")
    sub.add_parser("train", parents=[common, model_flags], help="fit the forecaster on the training split")
    sub.add_parser("predict", parents=[common, model_flags], help="forecast test windows and the next horizon")
    e = sub.add_parser("evaluate", parents=[common, model_flags], help="test-split metrics against persistence")
    e.add_argument("--force", action="store_true", help="accept a checkpoint produced under another config")
    pol = sub.add_parser("policy", parents=[common], help="turn forecasts into scaling actions")
    pol.add_argument("--history", help="policy_history.json from an earlier run")
    pol.add_argument("--format", choices=["json", "table"])
    r = sub.add_parser("replay", parents=[common], help="serve the slice frame as a metrics endpoint")
    r.add_argument("--bind", help="HOST:PORT")
    r.add_argument("--speedup", type=float)
    r.add_argument("--duration", type=float, help="stop after this many wall seconds (default: until interrupted)")
    pipe = sub.add_parser("pipeline", parents=[common, model_flags], help="run ingest through policy")
    pipe.add_argument("--theta", type=float)
    return p


_FLAG_FIELDS = {
    "topology": "paths.topology",
    "demands": "paths.demands",
    "seed": "seed",
    "theta": "slicing.theta",
    "model": "model.name",
    "input_len": "model.input_len",
    "horizon": "model.horizon",
    "epochs": "training.epochs",
    "lr": "training.lr",
    "bind": "replay.bind",
    "speedup": "replay.speedup",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.load(default_config_path())
    if os.environ.get(OUTPUT_ENV):
        cfg.set("paths.output_dir", os.environ[OUTPUT_ENV])
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects FIELD=VALUE, got {item!r}")
        cfg.set(key.strip(), _parse_value(value))
    for attr, field in _FLAG_FIELDS.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg.set(field, str(Path(v).resolve()) if field.startswith("paths.") else v)
    if args.output_dir:
        cfg.set("paths.output_dir", args.output_dir)
    cfg.validate()
    return cfg


def run(args: argparse.Namespace):
    """Yield one summary line per executed step."""
    cfg = resolve_config(args)
    art = Artifacts(cfg.output_dir, cfg)
    for cmd in PIPELINE if args.command == "pipeline" else (args.command,):
        yield _dispatch(cmd, cfg, art, args)


def _dispatch(cmd: str, cfg: RunConfig, art: Artifacts, args) -> str:
    if cmd == "ingest":
        return step_ingest(cfg, art)
    if cmd == "slices":
        return step_slices(cfg, art)
    if cmd == "train":
        return step_train(cfg, art)
    if cmd == "predict":
        return step_predict(cfg, art)
    if cmd == "evaluate":
        return step_evaluate(cfg, art, getattr(args, "force", False))
    if cmd == "policy":
        return step_policy(cfg, art, getattr(args, "history", None), getattr(args, "format", None))
    if cmd == "replay":
        return step_replay(cfg, art, args.duration)
    raise CLIError(f"unknown command {cmd}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        for line in run(args):
            print(line, flush=True)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
