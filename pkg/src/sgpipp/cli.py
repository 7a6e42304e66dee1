"""Command-line front end: ``ipp gen-data | plan | eval | plot``.

Exit codes: 0 ok, 2 config/parse error, 3 resource limit, 4 constraint or
bounds violation, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath
from typing import List, Optional

import jsonschema
import numpy as np

from .env import Environment, Path, path_length
from .errors import InfeasibleConstraint, InvalidArgument, NumericalFailure, ResourceLimit
from .evaluate import Field, OutOfBounds, evaluate_paths, sample_gp_field
from .kernel import RbfKernel
from .penalties import PenaltyConfig
from .plan import PastData, PlanResult, plan_multi, plan_single
from .plot import render_svg
from .sgp import ObjectiveConfig
from .transform import SensingModel

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_CONSTRAINT, EXIT_NUMERICAL = 0, 2, 3, 4, 5

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Malformed or unreadable input (exit 2)."""


# (dotted key, JSON type, unit, required, description)
CONFIG_KEYS = [
    ("environment.lower", "array", "m", True, "lower corner, one value per spatial axis"),
    ("environment.upper", "array", "m", True, "upper corner, one value per spatial axis"),
    ("environment.time_horizon", "array", "min", False, "[t0, t1]; enables spatio-temporal planning"),
    ("kernel.variance", "number", "field units^2", True, "RBF signal variance"),
    ("kernel.lengthscales", "array", "m (min for time)", True, "one per spatial axis, plus time last"),
    ("noise_variance", "number", "field units^2", False, "observation noise variance (default 0.01)"),
    ("robots", "integer", "count", False, "number of robots r (default 1)"),
    ("waypoints", "integer", "count", False, "waypoints per path s (default 10)"),
    ("seed", "integer", "-", False, "RNG seed (default 0)"),
    ("train_samples", "integer", "count", False, "unlabeled samples n (default 1000, 2000 above 2 inputs)"),
    ("start", "array", "m", False, "fixed first waypoint (single robot only)"),
    ("end", "array", "m", False, "fixed last waypoint (single robot only)"),
    ("decompose", "boolean", "-", False, "share waypoint times across robots (spatio-temporal only)"),
    ("past_data", "string", "path", False, "CSV with header x,y[,z],t of earlier samples, t <= 0 min"),
    ("sensing.kind", "string", "-", False, "point | arc | line_fov | square_fov_height (default point)"),
    ("sensing.p", "integer", "count", False, "points per segment or per line FoV (default 10)"),
    ("sensing.length", "number", "m", False, "line FoV length (default 1)"),
    ("sensing.half_angle", "number", "rad", False, "camera half field-of-view angle (default pi/6)"),
    ("sensing.g", "integer", "count", False, "square FoV grid side (default 3)"),
    ("sensing.height_bounds", "array", "m", False, "[low, high] camera height (default [0.5, 5])"),
    ("sensing.aggregate", "boolean", "-", False, "average covariances per sensor group (default true)"),
    ("penalties.distance_budget", "number", "m", False, "maximum length of each path"),
    ("penalties.velocity_limit", "number", "m/min", False, "maximum speed between waypoints"),
    ("penalties.accel_limit", "number", "m/min^2", False, "maximum acceleration"),
    ("penalties.weight", "number", "-", False, "penalty weight alpha (default 100)"),
    ("optimizer.learning_rate", "number", "normalized units/step", False, "Adam step size (default 0.01)"),
    ("optimizer.max_iters", "integer", "iterations", False, "iteration cap (default 2000)"),
    ("optimizer.tol", "number", "relative", False, "convergence tolerance (default 1e-6)"),
    ("field.resolution", "integer", "points per axis", False, "gen-data grid resolution (default 25)"),
    ("field.time_resolution", "integer", "points", False, "gen-data time slices (default resolution)"),
    ("field.time_range", "array", "min", False, "gen-data time span (default the horizon)"),
    ("output_dir", "string", "path", False, "output directory when -o is not given"),
]


def _build_schema() -> dict:
    root = {"type": "object", "properties": {}, "required": [], "additionalProperties": False}
    for key, typ, _, required, _ in CONFIG_KEYS:
        node = root
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node["properties"]:
                node["properties"][part] = {"type": "object", "properties": {}, "required": [],
                                            "additionalProperties": False}
            if required and part not in node["required"]:
                node["required"].append(part)
            node = node["properties"][part]
        spec = {"type": typ}
        if typ == "array":
            spec["items"] = {"type": "number"}
            spec["minItems"] = 1
        if not required:
            spec = {"anyOf": [spec, {"type": "null"}]}
        node["properties"][parts[-1]] = spec
        if required:
            node["required"].append(parts[-1])
    return root


CONFIG_SCHEMA = _build_schema()


def keys_help() -> str:
    rows = [f"  {key:<28} {typ:<8} [{unit}]{' (required)' if req else ''}  {desc}"
            for key, typ, unit, req, desc in CONFIG_KEYS]
    return "config keys:\n" + "\n".join(rows)


def _strict_pairs(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not allowed")


def load_json(path) -> dict:
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text, object_pairs_hook=_strict_pairs, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _dotted(path) -> str:
    return ".".join(str(p) for p in path)


def _describe(err: jsonschema.ValidationError) -> str:
    where = _dotted(err.absolute_path)
    prefix = f"{where}." if where else ""
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return f"missing required key '{prefix}{missing[0]}'"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"unknown key '{prefix}{extra[0]}'"
    return f"key '{where or '<root>'}': {err.message}"


def validate_config(cfg) -> dict:
    """Check ``cfg`` against the strict schema; raises ConfigError naming the first problem."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if errors:
        raise ConfigError(_describe(errors[0]))
    return cfg


def _get(cfg: dict, key: str, default=None):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or node.get(part) is None:
            return default
        node = node[part]
    return node


def build_environment(cfg) -> Environment:
    th = _get(cfg, "environment.time_horizon")
    if th is not None and len(th) != 2:
        raise ConfigError("environment.time_horizon must have two entries")
    return Environment(cfg["environment"]["lower"], cfg["environment"]["upper"], None if th is None else tuple(th))


def build_kernel(cfg) -> RbfKernel:
    return RbfKernel(float(cfg["kernel"]["variance"]), cfg["kernel"]["lengthscales"])


def build_sensing(cfg) -> SensingModel:
    s = _get(cfg, "sensing", {})
    kw = {k: s[k] for k in ("kind", "p", "length", "half_angle", "g", "aggregate") if s.get(k) is not None}
    if s.get("height_bounds") is not None:
        kw["height_bounds"] = tuple(s["height_bounds"])
    return SensingModel(**kw)


def build_penalties(cfg) -> Optional[PenaltyConfig]:
    p = _get(cfg, "penalties")
    if not p:
        return None
    return PenaltyConfig(**{k: v for k, v in p.items() if v is not None})


def build_optimizer(cfg) -> ObjectiveConfig:
    o = _get(cfg, "optimizer", {})
    return ObjectiveConfig(**{k: v for k, v in o.items() if v is not None})


def _resolve(path: str, base: FsPath) -> FsPath:
    p = FsPath(path)
    return p if p.is_absolute() else base / p


def read_past_data(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read past data {path}: {exc.strerror or exc}") from None
    if len(rows) < 2 or rows[0][-1].strip() != "t":
        raise ConfigError(f"{path}: expected a header ending in 't' and at least one row")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_text(path: FsPath, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _out_dir(args, cfg=None) -> FsPath:
    out = args.output or (_get(cfg, "output_dir") if cfg else None)
    if not out:
        raise ConfigError("no output directory: pass -o or set output_dir")
    return FsPath(out)


# ---------------------------------------------------------------- field I/O

def write_field(field: Field, out: FsPath, cfg_path=None):
    names = ["x", "y", "z"][: field.env.dim] + (["t"] if field.has_time else [])
    pts = field.points()
    vals = field.flat_values()
    lines = [",".join(names + ["value"])]
    for p, v in zip(pts, vals):
        lines.append(",".join("%.9g" % c for c in p) + ",%.9g" % v)
    _write_text(out / "field.csv", "\n".join(lines) + "\n")
    meta = {
        "lower": field.env.lower.tolist(),
        "upper": field.env.upper.tolist(),
        "time_horizon": None if field.env.time_horizon is None else list(field.env.time_horizon),
        "time_range": [float(field.axes[-1][0]), float(field.axes[-1][-1])] if field.has_time else None,
        "resolution": [len(a) for a in field.axes],
        "kernel": {"variance": field.kernel.variance, "lengthscales": field.kernel.lengthscales.tolist()},
        "noise_variance": field.noise_variance,
        "seed": field.seed,
    }
    _write_text(out / "field.meta.json", _dump_json(meta))


def read_field(path) -> Field:
    """Load ``field.csv`` plus the ``<stem>.meta.json`` written next to it."""
    path = FsPath(path)
    meta_path = path.with_name(path.stem + ".meta.json")
    meta = load_json(meta_path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read field {path}: {exc.strerror or exc}") from None
    if len(rows) < 2 or rows[0][-1] != "value":
        raise ConfigError(f"{path}: expected header x,y[,z][,t],value")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        env = Environment(meta["lower"], meta["upper"],
                          None if meta.get("time_horizon") is None else tuple(meta["time_horizon"]))
        kernel = RbfKernel(meta["kernel"]["variance"], meta["kernel"]["lengthscales"])
        shape = [int(r) for r in meta["resolution"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed field ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(shape) + 1 or data.shape[0] != int(np.prod(shape)):
        raise ConfigError(f"{path}: grid does not match resolution {shape} in {meta_path.name}")
    axes = [np.unique(data[:, j]) for j in range(len(shape))]
    if [len(a) for a in axes] != shape:
        raise ConfigError(f"{path}: grid axes do not match resolution {shape}")
    return Field(axes, data[:, -1].reshape(shape), kernel, env, int(meta.get("seed", 0)),
                 float(meta.get("noise_variance", 1e-2)))


# ---------------------------------------------------------------- paths I/O

def _columns(env: Environment, sensing: SensingModel) -> List[str]:
    cols = ["x", "y", "z"][: env.dim]
    if sensing.kind == "line_fov":
        cols.append("theta")
    elif sensing.kind == "square_fov_height":
        cols.append("h")
    if env.has_time:
        cols.append("t")
    return cols


def paths_document(result: PlanResult, seed: int, columns: List[str]) -> dict:
    robots = [{"id": int(p.robot_id), "waypoints": p.waypoints.tolist(), "length_m": path_length(p)}
              for p in result.paths]
    return {"robots": robots, "columns": columns, "objective": float(result.objective), "seed": int(seed),
            "warning": result.warning}


def read_paths(path) -> dict:
    doc = load_json(path)
    if not isinstance(doc, dict) or not isinstance(doc.get("robots"), list) or not doc["robots"]:
        raise ConfigError(f"{path}: expected an object with a non-empty 'robots' list")
    for i, r in enumerate(doc["robots"]):
        wp = r.get("waypoints") if isinstance(r, dict) else None
        try:
            arr = np.asarray(wp, dtype=float)
        except (TypeError, ValueError):
            arr = None
        if arr is None or arr.ndim != 2 or arr.shape[0] < 1 or not np.all(np.isfinite(arr)):
            raise ConfigError(f"{path}: robot {i} has malformed waypoints")
        r["_array"] = arr
    return doc


def _doc_paths(doc: dict, n_spatial: int, has_time: bool) -> List[Path]:
    cols = doc.get("columns")
    if cols is not None:
        has_time = "t" in cols
    return [Path(r["_array"], robot_id=int(r.get("id", i)), has_time=has_time, n_spatial=n_spatial)
            for i, r in enumerate(doc["robots"])]


# ---------------------------------------------------------------- commands

def _plan_once(payload):
    cfg, seed, past = payload
    return _plan_from_config(cfg, seed, past)


def _plan_from_config(cfg, seed, past) -> PlanResult:
    kernel = build_kernel(cfg)
    env = build_environment(cfg)
    start, end = _get(cfg, "start"), _get(cfg, "end")
    if start is not None or end is not None:
        if int(_get(cfg, "robots", 1)) != 1:
            raise ConfigError("start/end are only supported with robots = 1")
        return plan_single(kernel, env, int(_get(cfg, "waypoints", 10)), build_optimizer(cfg),
                           build_penalties(cfg), build_sensing(cfg), seed,
                           noise_variance=float(_get(cfg, "noise_variance", 1e-2)), n=_get(cfg, "train_samples"),
                           fixed_start=start, fixed_end=end, past=None if past is None else PastData(past))
    return plan_multi(kernel, env, int(_get(cfg, "waypoints", 10)), int(_get(cfg, "robots", 1)),
                      build_optimizer(cfg), build_penalties(cfg), build_sensing(cfg), seed,
                      noise_variance=float(_get(cfg, "noise_variance", 1e-2)), n=_get(cfg, "train_samples"),
                      past=None if past is None else PastData(past), decompose=bool(_get(cfg, "decompose", False)))


def _workers(k: int) -> int:
    cap = os.environ.get("IPP_THREADS")
    try:
        cap = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"IPP_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(k, cap))


def cmd_gen_data(args) -> int:
    cfg = validate_config(load_json(args.config))
    out = _out_dir(args, cfg)
    env = build_environment(cfg)
    tr = _get(cfg, "field.time_range")
    field = sample_gp_field(build_kernel(cfg), env, int(_get(cfg, "field.resolution", 25)), int(_get(cfg, "seed", 0)),
                            time_resolution=_get(cfg, "field.time_resolution"),
                            time_range=None if tr is None else tuple(tr),
                            noise_variance=float(_get(cfg, "noise_variance", 1e-2)))
    write_field(field, out)
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = validate_config(load_json(args.config))
    out = _out_dir(args, cfg)
    field = read_field(args.field) if args.field else None
    past = None
    if _get(cfg, "past_data"):
        past = read_past_data(_resolve(cfg["past_data"], FsPath(args.config).parent))
    seed = int(_get(cfg, "seed", 0))
    k = args.restarts
    if k < 1:
        raise ConfigError("--restarts must be >= 1")
    seeds = [seed + i for i in range(k)]
    workers = _workers(k)
    if workers == 1:
        results = [_plan_from_config(cfg, s, past) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_plan_once, [(cfg, s, past) for s in seeds]))
    best = max(range(k), key=lambda i: (results[i].objective, -i))
    result, best_seed = results[best], seeds[best]

    env = build_environment(cfg)
    doc = paths_document(result, best_seed, _columns(env, build_sensing(cfg)))
    _write_text(out / "paths.json", _dump_json(doc))
    trace = "iteration,objective\n" + "".join(f"{i},{_fmt(v)}\n" for i, v in enumerate(result.trace))
    _write_text(out / "trace.csv", trace)
    summary = {"objective": float(result.objective), "lengths": [r["length_m"] for r in doc["robots"]]}
    if field is not None:
        past_obs = None if past is None else (past, field.interpolate(past))
        summary["rmse"] = evaluate_paths(field, result.paths, extra_obs=past_obs).rmse
    if result.warning:
        summary["warning"] = result.warning
    print(json.dumps(summary))
    if result.warning:
        print(f"ipp: {result.warning}; best-effort paths written", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    doc = read_paths(args.paths)
    field = read_field(args.field)
    paths = _doc_paths(doc, field.env.dim, field.has_time)
    res = evaluate_paths(field, paths, args.sensing, args.step)
    report = {"rmse": res.rmse, "observations": int(res.n_obs), "lengths": [path_length(p) for p in paths],
              "sensing": args.sensing}
    if args.sensing == "continuous":
        report["step"] = args.step if args.step is not None else float(field.kernel.lengthscales[: field.env.dim].min()) / 5.0
    _write_text(out / "report.json", _dump_json(report))
    return EXIT_OK


def cmd_plot(args) -> int:
    out = _out_dir(args)
    doc = read_paths(args.paths)
    field = read_field(args.field) if args.field else None
    if field is not None:
        n_spatial, has_time = field.env.dim, field.has_time
    else:
        n_spatial, has_time = 2, doc["robots"][0]["_array"].shape[1] == 3
    paths = _doc_paths(doc, n_spatial, has_time)
    _write_text(out / "plot.svg", render_svg(paths, field))
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("-o", "--output", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="ipp", description="Informative path planning with sparse GPs.",
                                     epilog=keys_help(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a synthetic GP field", epilog=keys_help(), formatter_class=fmt)
    g.add_argument("-c", "--config", required=True, help="JSON run config")
    _add_common(g)
    g.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("plan", help="plan informative paths", epilog=keys_help(), formatter_class=fmt)
    p.add_argument("-c", "--config", required=True, help="JSON run config")
    p.add_argument("--field", help="field.csv for immediate evaluation")
    p.add_argument("--restarts", type=int, default=1, help="independent seeds (seed, seed+1, ...); best objective wins")
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    e = sub.add_parser("eval", help="score paths against a field", epilog=keys_help(), formatter_class=fmt)
    e.add_argument("--paths", required=True, help="paths.json")
    e.add_argument("--field", required=True, help="field.csv (field.meta.json must sit next to it)")
    e.add_argument("--sensing", choices=("discrete", "continuous"), default="discrete")
    e.add_argument("--step", type=float, help="continuous sampling step in m (default min lengthscale / 5)")
    _add_common(e)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("plot", help="render paths to SVG", epilog=keys_help(), formatter_class=fmt)
    q.add_argument("--paths", required=True, help="paths.json")
    q.add_argument("--field", help="field.csv drawn as a heatmap")
    _add_common(q)
    q.set_defaults(func=cmd_plot)
    return parser


_EXIT_FOR = [
    (ConfigError, EXIT_CONFIG),
    (OutOfBounds, EXIT_CONSTRAINT),
    (InfeasibleConstraint, EXIT_CONSTRAINT),
    (ResourceLimit, EXIT_RESOURCE),
    (NumericalFailure, EXIT_NUMERICAL),
    (InvalidArgument, EXIT_CONFIG),
]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="ipp: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # map every failure to a documented exit code
        for cls, code in _EXIT_FOR:
            if isinstance(exc, cls):
                print(f"ipp {args.command}: {exc}", file=sys.stderr)
                return code
        if isinstance(exc, (ValueError, TypeError, KeyError)):
            print(f"ipp {args.command}: invalid input: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"ipp {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc, ArithmeticError) else 1


if __name__ == "__main__":
    sys.exit(main())
