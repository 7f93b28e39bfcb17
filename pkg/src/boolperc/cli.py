"""Command-line runner.

Every subcommand writes its table as CSV plus a ``manifest.json`` into
``--out``.  CSV bodies depend only on the configuration and the seed;
timestamps and wall times go to the manifest.

Exit codes: 0 ok, 2 invalid configuration, 3 budget exhausted (results are
written and flagged), 4 a verification check reported violations.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .estimators import (
    PHI_C_DISKS_2D,
    bracket_threshold_hat,
    covered_volume_fraction,
    critical_covered_volume,
    diameter_moment_probe,
    estimate_covered_volume,
    estimate_crossing,
    estimate_one_arm,
    limit_curve,
    multiscale_crossing_scan,
    two_scale_curve,
)
from .measures import MeasureError, MultiscaleSpec, RadiusMeasure, combine, multiscale_truncated
from .verification import SUITE, run_suite

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_VIOLATION = 0, 2, 3, 4

RESULT_COLUMNS = ["experiment_id", "alpha", "rho", "lambda_lo", "lambda_hi", "phi_hat", "ci_lo", "ci_hi", "n", "seed"]
PLOT_COLUMNS = ["alpha", "rho_or_inf", "phi", "ci_lo", "ci_hi"]

SUBCOMMANDS = (
    "crossing",
    "one-arm",
    "threshold",
    "covered-volume",
    "two-scale",
    "multiscale-scan",
    "diameter-probe",
    "verify",
    "emit-plot",
)

_number_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "subcommand": {"enum": list(SUBCOMMANDS)},
        "d": {"type": "integer", "minimum": 2},
        "measure": {"type": ["string", "object"]},
        "measure2": {"type": ["string", "object"]},
        "lambda": {"type": "number", "minimum": 0},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "alphas": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "a_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "n": {"type": "integer", "minimum": 1},
        "n_max": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "levels": {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "auto"}]},
        "workers": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "p_low": {"type": "number", "minimum": 0, "maximum": 1},
        "p_high": {"type": "number", "minimum": 0, "maximum": 1},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "phi_c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "suite": {"type": "array", "items": {"enum": ["all", *SUITE]}, "minItems": 1},
        "results": {"type": "array", "items": {"type": "string"}},
        "n_probe": {"type": "integer", "minimum": 1},
    },
    "required": ["subcommand"],
}

DEFAULTS = {"d": 2, "measure": "delta:1", "n": 200, "workers": 1, "out": "boolperc-out", "p_low": 0.05, "p_high": 0.6}


class ConfigError(ValueError):
    pass


# -- parsing helpers ------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``"lo:hi:step"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ConfigError(f"bad grid {text!r}; expected lo:hi:step")
        lo, hi, step = parts
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 12) for i in range(count)]
    return [float(x) for x in text.split(",") if x.strip()]


def parse_measure(spec) -> RadiusMeasure:
    """Measure from a short string, a JSON object or a path to a JSON file.

    Short forms: ``delta:r[:mass]``, ``atoms:r1@w1,r2@w2``,
    ``pareto:r_min:exponent[:mass]`` (density ``~ r**-exponent``),
    ``uniform:lo:hi[:mass]``.
    """
    try:
        if isinstance(spec, dict):
            return RadiusMeasure.from_json(spec)
        text = spec.strip()
        if text.startswith("{"):
            return RadiusMeasure.from_json(text)
        if text.endswith(".json"):
            return RadiusMeasure.from_json(Path(text).read_text())
        kind, _, rest = text.partition(":")
        if kind == "atoms":
            atoms = [tuple(float(v) for v in item.split("@")) for item in rest.split(",")]
            return RadiusMeasure.atomic(atoms)
        args = [float(v) for v in rest.split(":")] if rest else []
        if kind == "delta" and len(args) in (1, 2):
            return RadiusMeasure.delta(*args)
        if kind == "pareto" and len(args) in (2, 3):
            return RadiusMeasure.pareto(*args)
        if kind == "uniform" and len(args) in (2, 3):
            return RadiusMeasure.uniform(*args)
    except (MeasureError, ValueError, OSError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad measure {spec!r}: {exc}") from exc
    raise ConfigError(f"bad measure {spec!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boolperc", description="Boolean model percolation experiments")
    parser.add_argument("--version", action="version", version=f"boolperc {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config; command-line flags override it")
        p.add_argument("--d", type=int)
        p.add_argument("--measure")
        p.add_argument("--measure2", help="second measure of the two-scale mixture (default: --measure)")
        p.add_argument("--lambda", dest="lambda_", type=float)
        p.add_argument("--rho", type=float)
        p.add_argument("--alpha", "--alphas", dest="alphas")
        p.add_argument("--a", type=float)
        p.add_argument("--a-grid", dest="a_grid")
        p.add_argument("--n", type=int)
        p.add_argument("--n-max", dest="n_max", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--levels")
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
        p.add_argument("--p-low", dest="p_low", type=float)
        p.add_argument("--p-high", dest="p_high", type=float)
        p.add_argument("--s", type=float)
        p.add_argument("--phi-c", dest="phi_c", type=float)
        p.add_argument("--n-probe", dest="n_probe", type=int)
        p.add_argument("--suite", help="'all' or comma-separated check names")
        p.add_argument("--results", nargs="*", help="two-scale CSV files (emit-plot)")
    return parser


def make_config(args: argparse.Namespace) -> tuple[dict, str]:
    """Merge file config, flags and defaults; validate; return config and seed source."""
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        if cfg.get("subcommand", args.subcommand) != args.subcommand:
            raise ConfigError("config subcommand does not match the command line")
    cfg["subcommand"] = args.subcommand
    flags = {
        "d": args.d,
        "measure": args.measure,
        "measure2": args.measure2,
        "lambda": args.lambda_,
        "rho": args.rho,
        "a": args.a,
        "n": args.n,
        "n_max": args.n_max,
        "seed": args.seed,
        "workers": args.workers,
        "out": args.out,
        "p_low": args.p_low,
        "p_high": args.p_high,
        "s": args.s,
        "phi_c": args.phi_c,
        "n_probe": args.n_probe,
        "results": args.results,
    }
    if args.alphas is not None:
        flags["alphas"] = parse_grid(args.alphas)
    if args.a_grid is not None:
        flags["a_grid"] = parse_grid(args.a_grid)
    if args.levels is not None:
        flags["levels"] = args.levels if args.levels == "auto" else _int(args.levels, "levels")
    if args.suite is not None:
        flags["suite"] = [s.strip() for s in args.suite.split(",") if s.strip()]
    cfg.update({k: v for k, v in flags.items() if v is not None})
    seed_source = "config" if "seed" in cfg else None
    if seed_source is None and os.environ.get("BOOLPERC_SEED"):
        cfg["seed"] = _int(os.environ["BOOLPERC_SEED"], "BOOLPERC_SEED")
        seed_source = "BOOLPERC_SEED"
    if seed_source is None:
        cfg["seed"] = 0
        seed_source = "default"
    for k, v in DEFAULTS.items():
        cfg.setdefault(k, v)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    return cfg, seed_source


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"{what} must be an integer, got {text!r}") from exc


def config_hash(cfg: dict) -> str:
    """Hash of the configuration, ignoring where the output goes."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "inf" if math.isinf(x) else repr(float(x))
    return str(x)


def write_table(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"{cfg['subcommand']} needs: {', '.join(missing)}")


def _model(cfg: dict, lam: float):
    """``lam * mu``, or the truncated multiscale model when ``rho`` is given."""
    mu = combine([(lam, parse_measure(cfg["measure"]))], allow_zero=True)
    if "rho" not in cfg:
        return mu, 0
    levels = cfg.get("levels", 0)
    if levels == "auto":
        from .sampler import auto_levels

        a_max = max(cfg.get("a_grid", [cfg.get("a", 1.0)]))
        levels = auto_levels(MultiscaleSpec(mu, cfg["rho"], "auto"), 1.0, a_max, cfg["d"])
    return MultiscaleSpec(mu, cfg["rho"], int(levels)), int(levels)


def _grid(cfg: dict) -> list[float]:
    if "a_grid" in cfg:
        return cfg["a_grid"]
    _require(cfg, "a")
    return [cfg["a"]]


# -- subcommands ------------------------------------------------------------------


def cmd_crossing(cfg, one_arm=False):
    _require(cfg, "lambda")
    model, levels = _model(cfg, cfg["lambda"])
    rows = []
    for a in _grid(cfg):
        fn = estimate_one_arm if one_arm else estimate_crossing
        est = fn(model, a, cfg["d"], cfg["n"], cfg["seed"], cfg["workers"])
        rows.append(
            {
                "experiment_id": "one-arm" if one_arm else "crossing",
                "a": a,
                "lambda": cfg["lambda"],
                "rho": cfg.get("rho"),
                "levels": levels,
                "n": est.n,
                "k": est.k,
                "p_hat": est.p_hat,
                "ci_lo": est.lo,
                "ci_hi": est.hi,
                "r_d_p_hat": est.diagnostic,
                "seed": cfg["seed"],
            }
        )
    cols = ["experiment_id", "a", "lambda", "rho", "levels", "n", "k", "p_hat", "ci_lo", "ci_hi"]
    cols += (["r_d_p_hat"] if one_arm else []) + ["seed"]
    return {"results.csv": (cols, rows)}, EXIT_OK, {"levels": levels}


def cmd_threshold(cfg):
    mu = parse_measure(cfg["measure"])
    levels = 0
    if "rho" in cfg:
        levels = cfg.get("levels", 0)
        if levels == "auto":
            raise ConfigError("threshold needs an integer --levels with --rho")
        mu = multiscale_truncated(MultiscaleSpec(mu, cfg["rho"], int(levels)), cfg["d"])
    ladder = cfg.get("a_grid", [8.0, 16.0, 32.0, 64.0])
    br = bracket_threshold_hat(
        mu, cfg["d"], ladder, cfg["p_low"], cfg["p_high"], cfg["n"], cfg["seed"], n_max=cfg.get("n_max"), workers=cfg["workers"]
    )
    row = {
        "experiment_id": "threshold",
        "rho": cfg.get("rho"),
        "lambda_lo": br.lambda_lo,
        "lambda_hi": br.lambda_hi,
        "phi_hat": critical_covered_volume(br.midpoint, mu, cfg["d"]),
        "ci_lo": critical_covered_volume(br.lambda_lo, mu, cfg["d"]),
        "ci_hi": critical_covered_volume(br.lambda_hi, mu, cfg["d"]) if math.isfinite(br.lambda_hi) else 1.0,
        "n": br.n,
        "seed": cfg["seed"],
    }
    evidence = [
        {"lambda": e.lam, "n": e.n, "p_hat": e.p_hat, "verdict": e.verdict} for e in br.evidence
    ]
    extra = {"ladder": list(br.ladder), "inconclusive": br.inconclusive, "levels": levels, "evidence": evidence}
    return {"results.csv": (RESULT_COLUMNS, [row])}, EXIT_BUDGET if br.inconclusive else EXIT_OK, extra


def cmd_covered_volume(cfg):
    _require(cfg, "lambda")
    model, levels = _model(cfg, cfg["lambda"])
    mu = multiscale_truncated(model, cfg["d"]) if isinstance(model, MultiscaleSpec) else model
    phi = covered_volume_fraction(mu, cfg["d"])
    a = cfg.get("a", 16.0)
    mean, se = estimate_covered_volume(model, a, cfg["d"], cfg["n"], cfg.get("n_probe", 2000), cfg["seed"], cfg["workers"])
    row = {
        "experiment_id": "covered-volume",
        "rho": cfg.get("rho"),
        "lambda_lo": cfg["lambda"],
        "lambda_hi": cfg["lambda"],
        "phi_hat": mean,
        "ci_lo": mean - 1.96 * se,
        "ci_hi": mean + 1.96 * se,
        "n": cfg["n"],
        "seed": cfg["seed"],
        "phi_analytic": phi,
    }
    return {"results.csv": (RESULT_COLUMNS + ["phi_analytic"], [row])}, EXIT_OK, {"levels": levels, "a": a}


def cmd_two_scale(cfg):
    _require(cfg, "rho")
    nu1 = parse_measure(cfg["measure"])
    nu2 = parse_measure(cfg.get("measure2", cfg["measure"]))
    alphas = cfg.get("alphas", parse_grid("0.1:0.9:0.1"))
    phi_c = cfg.get("phi_c", PHI_C_DISKS_2D if cfg["d"] == 2 and nu1 == nu2 == RadiusMeasure.delta(1.0) else None)
    ladder = cfg.get("a_grid", [4.0, 8.0, 16.0])
    rows = two_scale_curve(
        nu1, nu2, alphas, cfg["rho"], cfg["d"], ladder, cfg["n"], cfg["seed"], cfg["p_low"], cfg["p_high"],
        phi_c=phi_c, workers=cfg["workers"], n_max=cfg.get("n_max"),
    )
    for r in rows:
        r["experiment_id"] = "two-scale"
    status = EXIT_BUDGET if any(r["inconclusive"] for r in rows) else EXIT_OK
    return {"results.csv": (RESULT_COLUMNS + ["phi_limit"], rows)}, status, {"ladder": ladder, "phi_c": phi_c}


def cmd_multiscale_scan(cfg):
    _require(cfg, "lambda", "rho", "a_grid")
    levels = cfg.get("levels", 2)
    if levels == "auto":
        raise ConfigError("multiscale-scan needs an integer --levels")
    mu = parse_measure(cfg["measure"])
    out = multiscale_crossing_scan(mu, cfg["lambda"], cfg["rho"], int(levels), cfg["a_grid"], cfg["d"], cfg["n"], cfg["seed"], cfg["workers"])
    rows = [
        {"levels": k, "a": a, "n": e.n, "k": e.k, "p_hat": e.p_hat, "ci_lo": e.lo, "ci_hi": e.hi, "seed": cfg["seed"]}
        for (k, a), e in sorted(out["estimates"].items())
    ]
    return {"results.csv": (["levels", "a", "n", "k", "p_hat", "ci_lo", "ci_hi", "seed"], rows)}, EXIT_OK, {}


def cmd_diameter_probe(cfg):
    _require(cfg, "lambda", "a_grid")
    levels = cfg.get("levels", 0)
    if levels == "auto":
        raise ConfigError("diameter-probe needs an integer --levels")
    mu = parse_measure(cfg["measure"])
    res = diameter_moment_probe(
        mu, cfg["lambda"], cfg.get("rho", 2.0), int(levels), cfg.get("s", 1.0), cfg["a_grid"], cfg["d"], cfg["n"], cfg["seed"], workers=cfg["workers"]
    )
    rows = [dict(r, seed=cfg["seed"], n=cfg["n"]) for r in res["rows"]]
    return {"results.csv": (["window", "moment", "censored", "n", "seed"], rows)}, EXIT_OK, {"trend": res["trend"], "ratios": res["ratios"]}


def cmd_verify(cfg):
    suite = cfg.get("suite", ["all"])
    checks = "all" if "all" in suite else suite
    reports = [r.to_json() for r in run_suite(checks, cfg["n"], cfg["seed"], cfg["workers"])]
    bad = sum(r["violations"] for r in reports)
    rows = [{"check": r["check"], "samples": r["samples"], "violations": r["violations"], "seed": r["seed"]} for r in reports]
    return (
        {"results.csv": (["check", "samples", "violations", "seed"], rows), "report.json": reports},
        EXIT_VIOLATION if bad else EXIT_OK,
        {},
    )


def emit_plot_data(rows: list[dict], phi_c: float | None = PHI_C_DISKS_2D) -> list[dict]:
    """Tidy rows ``(alpha, rho_or_inf, phi, ci_lo, ci_hi)`` from two-scale results,
    plus the analytic limit curve (``rho_or_inf = "inf"``) at the same alphas."""
    out = [
        {"alpha": float(r["alpha"]), "rho_or_inf": _fmt(float(r["rho"])), "phi": float(r["phi_hat"]), "ci_lo": float(r["ci_lo"]), "ci_hi": float(r["ci_hi"])}
        for r in rows
    ]
    if phi_c is not None:
        for alpha in sorted({o["alpha"] for o in out}):
            v = limit_curve(alpha, phi_c)
            out.append({"alpha": alpha, "rho_or_inf": "inf", "phi": v, "ci_lo": v, "ci_hi": v})
    out.sort(key=lambda o: (math.inf if o["rho_or_inf"] == "inf" else float(o["rho_or_inf"]), o["alpha"]))
    return out


def cmd_emit_plot(cfg):
    rows = []
    for path in cfg.get("results", []):
        try:
            with open(path, newline="") as fh:
                rows += [r for r in csv.DictReader(fh) if r.get("experiment_id") == "two-scale"]
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    return {"plot_data.csv": (PLOT_COLUMNS, emit_plot_data(rows, cfg.get("phi_c", PHI_C_DISKS_2D)))}, EXIT_OK, {}


HANDLERS = {
    "crossing": cmd_crossing,
    "one-arm": lambda cfg: cmd_crossing(cfg, one_arm=True),
    "threshold": cmd_threshold,
    "covered-volume": cmd_covered_volume,
    "two-scale": cmd_two_scale,
    "multiscale-scan": cmd_multiscale_scan,
    "diameter-probe": cmd_diameter_probe,
    "verify": cmd_verify,
    "emit-plot": cmd_emit_plot,
}


def run(cfg: dict, seed_source: str = "config") -> int:
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    artifacts, status, extra = HANDLERS[cfg["subcommand"]](cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for name, payload in artifacts.items():
        if name.endswith(".csv"):
            write_table(out / name, *payload)
        else:
            (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    manifest = {
        "version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "seed_source": seed_source,
        "exit_status": status,
        "started": started,
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "wall_time": time.perf_counter() - t0,
        "artifacts": sorted(artifacts),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_fmt) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, seed_source = make_config(args)
        return run(cfg, seed_source)
    except ConfigError as exc:
        print(f"boolperc: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
