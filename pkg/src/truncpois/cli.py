"""Command-line front end: ``truncpois <command> [flags]``.

Every command prints one record to stdout. Floats are written with 17
significant digits and infinities as the string ``"inf"``, so the output is
byte-stable across runs. Exit codes: 0 success, 2 usage or config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import resources
from typing import Any, Dict, List, Optional

import jsonschema

from .binom_math import TruncatedPoissonParams
from .calibrate_compare import UNION, CalibrationError, calibrate_sigma, compare, delta_curve
from .dominating_pairs import Adjacency
from .pld_core import DEFAULT_GRID_STEP, NumericalError, account
from .sampler_sim import simulate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

COMMANDS = ("delta", "epsilon", "curve", "calibrate", "compare", "simulate")
CURVE_HEADER = ("epsilon", "delta_tight", "delta_naive")

DEFAULTS: Dict[str, Any] = {
    "steps": 1,
    "adjacency": "add-remove",
    "grid_step": DEFAULT_GRID_STEP,
    "direction": "max",
    "format": "json",
    "seed": 0,
    "trials": 10000,
    "eta_mode": UNION,
}

# keys each command needs after defaults are applied
REQUIRED = {
    "delta": ("n", "p", "B", "sigma", "epsilon"),
    "epsilon": ("n", "p", "B", "sigma", "delta"),
    "curve": ("n", "p", "B", "sigma", "epsilon_grid"),
    "calibrate": ("n", "p", "B", "epsilon", "delta"),
    "compare": ("n", "p", "B", "epsilon", "delta"),
    "simulate": ("n", "p", "B", "trials", "seed"),
}


class UsageError(ValueError):
    pass


def load_schema(name: str) -> dict:
    text = resources.files("truncpois").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


# ---------------------------------------------------------------- formatting


def _fmt_float(x: float) -> str:
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    if math.isnan(x):
        raise NumericalError("refusing to serialize NaN")
    text = format(x, ".17g")
    if text in ("0", "-0"):
        return "0.0"
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    if value is None:
        return "null"
    # numpy scalars
    if hasattr(value, "item"):
        return _encode(value.item())
    raise TypeError(f"cannot serialize {type(value).__name__}")


def to_json(record: dict) -> str:
    return _encode(record) + "\n"


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return _fmt_float(value).strip('"')
    return str(value)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- config


def _parse_grid(text: str) -> List[float]:
    """``start:stop:step`` (inclusive stop) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(t) for t in text.split(":"))
            if step <= 0:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(count, 0))]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="truncpois",
        description="Privacy accounting for the truncated Poisson sampled Gaussian mechanism.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="JSON config file; flags override its values")
        cmd.add_argument("--n", type=int)
        cmd.add_argument("--p", type=float)
        cmd.add_argument("--B", type=int)
        cmd.add_argument("--sigma", type=float)
        cmd.add_argument("--steps", type=int)
        cmd.add_argument("--adjacency", choices=[a.value for a in Adjacency])
        cmd.add_argument("--grid-step", dest="grid_step", type=float)
        cmd.add_argument("--epsilon", type=float)
        cmd.add_argument("--delta", type=float)
        cmd.add_argument("--direction", choices=["max", "forward", "reverse"])
        cmd.add_argument("--format", choices=["json", "csv"])
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--trials", type=int)
        cmd.add_argument("--epsilon-grid", dest="epsilon_grid", type=_parse_grid,
                         help="start:stop:step or comma-separated values (curve only)")
        cmd.add_argument("--eta-mode", dest="eta_mode", choices=["union", "independent"])
    return parser


def resolve_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge defaults < config file < flags, then validate the result against the schema."""
    schema = load_schema("config.schema.json")
    merged = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        try:
            jsonschema.validate(from_file, schema)
        except jsonschema.ValidationError as exc:
            raise UsageError(f"invalid config {args.config}: {exc.message}") from None
        merged.update(from_file)
    for key in schema["properties"]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    try:
        jsonschema.validate(merged, schema)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "config"
        raise UsageError(f"{path}: {exc.message}") from None
    for key in ("n", "B", "steps", "seed", "trials"):
        if key in merged:
            merged[key] = int(merged[key])
    missing = [k for k in REQUIRED[args.command] if k not in merged]
    if missing:
        raise UsageError(f"{args.command} needs: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return merged


# ---------------------------------------------------------------- commands


def _params(cfg) -> TruncatedPoissonParams:
    return TruncatedPoissonParams(cfg["n"], cfg["p"], cfg["B"], cfg["sigma"])


def _query_record(cfg, result, command) -> dict:
    return {
        "command": command,
        "epsilon": result.epsilon,
        "delta": result.delta,
        "params": {"n": cfg["n"], "p": float(cfg["p"]), "B": cfg["B"], "sigma": float(cfg["sigma"])},
        "adjacency": cfg["adjacency"],
        "steps": cfg["steps"],
        "grid_step": float(cfg["grid_step"]),
        "direction": cfg["direction"],
    }


def cmd_delta(cfg) -> dict:
    res = account(_params(cfg), cfg["adjacency"], cfg["steps"], cfg["grid_step"],
                  epsilon=cfg["epsilon"], direction=cfg["direction"])
    return _query_record(cfg, res, "delta")


def cmd_epsilon(cfg) -> dict:
    res = account(_params(cfg), cfg["adjacency"], cfg["steps"], cfg["grid_step"],
                  delta=cfg["delta"], direction=cfg["direction"])
    return _query_record(cfg, res, "epsilon")


def cmd_curve(cfg) -> dict:
    rows = delta_curve(_params(cfg), cfg["adjacency"], cfg["steps"], cfg["epsilon_grid"],
                       cfg["grid_step"], cfg["direction"], cfg["eta_mode"])
    return {
        "command": "curve",
        "params": {"n": cfg["n"], "p": float(cfg["p"]), "B": cfg["B"], "sigma": float(cfg["sigma"])},
        "adjacency": cfg["adjacency"],
        "steps": cfg["steps"],
        "grid_step": float(cfg["grid_step"]),
        "direction": cfg["direction"],
        "eta_mode": cfg["eta_mode"],
        "rows": [dict(zip(CURVE_HEADER, row)) for row in rows],
    }


def cmd_calibrate(cfg) -> dict:
    sigma = calibrate_sigma(cfg["n"], cfg["p"], cfg["B"], cfg["adjacency"], cfg["steps"],
                            cfg["epsilon"], cfg["delta"], cfg["grid_step"], cfg["direction"])
    return {
        "command": "calibrate",
        "sigma": sigma,
        "n": cfg["n"],
        "p": float(cfg["p"]),
        "B": cfg["B"],
        "adjacency": cfg["adjacency"],
        "steps": cfg["steps"],
        "target_epsilon": float(cfg["epsilon"]),
        "target_delta": float(cfg["delta"]),
        "grid_step": float(cfg["grid_step"]),
        "direction": cfg["direction"],
    }


def cmd_compare(cfg) -> dict:
    report = compare(cfg["n"], cfg["p"], cfg["B"], cfg["adjacency"], cfg["steps"], cfg["epsilon"],
                     cfg["delta"], cfg["grid_step"], cfg["direction"], cfg["eta_mode"])
    record = {"command": "compare", **report.to_dict(), "direction": cfg["direction"]}
    for key in ("p", "target_epsilon", "target_delta", "grid_step"):
        record[key] = float(record[key])
    return record


def cmd_simulate(cfg) -> dict:
    out = simulate(cfg["n"], cfg["p"], cfg["B"], cfg["trials"], cfg["seed"])
    out["p"] = float(out["p"])
    return {"command": "simulate", **out}


HANDLERS = {
    "delta": cmd_delta,
    "epsilon": cmd_epsilon,
    "curve": cmd_curve,
    "calibrate": cmd_calibrate,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
}


def render(command: str, record: dict, fmt: str) -> str:
    if fmt == "json":
        return to_json(record)
    if command == "curve":
        return to_csv(CURVE_HEADER, [[r[k] for k in CURVE_HEADER] for r in record["rows"]])
    flat = {k: v for k, v in record.items() if not isinstance(v, dict)}
    flat.update({k: v for k, v in record.get("params", {}).items()})
    return to_csv(list(flat), [list(flat.values())])


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        record = HANDLERS[args.command](cfg)
    except (NumericalError, CalibrationError) as exc:
        print(f"truncpois {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"truncpois {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(render(args.command, record, cfg["format"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
