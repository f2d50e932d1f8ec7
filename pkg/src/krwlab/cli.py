"""Command-line experiment harness.

    krwlab <experiment> [flags] [--config FILE] [--seed N] [--out DIR]

Each experiment has a small schema.  Values come from the schema defaults,
then the config document (YAML or JSON, or a manifest written by an earlier
run), then command-line flags.  The resolved config is validated before any
computation and echoed into ``manifest.json`` next to the CSV (and SVG for
curve-type experiments).  CSV files carry no timings, so re-running a
manifest reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__, report
from .core import (RandomStream, parse_exhaustion, parse_killing, trapping_classifier,
                   trapping_partial_sums)

log = logging.getLogger("krwlab")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field (and line if known)."""


# ---------------------------------------------------------------------------
# field types

def _num_list(v):
    if isinstance(v, str):
        v = [t for t in v.replace(" ", "").split(",") if t]
    if isinstance(v, (int, float)):
        v = [v]
    out = [float(t) for t in v]
    return [int(t) if float(t).is_integer() else t for t in out]


def _point(v):
    if isinstance(v, str):
        v = v.replace("(", "").replace(")", "").split(",")
    if isinstance(v, (int, float)):
        v = [v]
    return [int(t) for t in v]


def _point_list(v):
    if isinstance(v, str):
        v = [p for p in v.split(";") if p.strip()]
    return [_point(p) for p in v]


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _posint(v):
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"not an integer: {v!r}")
    n = int(float(v)) if isinstance(v, str) else int(v)
    if n < 1:
        raise ValueError("must be a positive integer")
    return n


def _posfloat(v):
    x = float(v)
    if not x > 0:
        raise ValueError("must be positive")
    return x


def _choice(*opts):
    def f(v):
        if v not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return v
    return f


def _killing(v):
    parse_killing(v)
    return v


def _exhaustion(v):
    parse_exhaustion(v)
    return v


@dataclass
class Field:
    conv: callable
    default: object = None
    help: str = ""
    required: bool = False


COMMON = {
    "seed": Field(int, 0, "root seed"),
    "out": Field(str, "results", "output directory"),
    "cache": Field(str, None, "directory for cached exact solves"),
}

SCHEMAS = {
    "solve": {
        "d": Field(_posint, 1, "lattice dimension"),
        "killing": Field(_killing, "indicator:0:0.5", "killing field spec"),
        "exhaustion": Field(_exhaustion, None, "exhaustion spec (ball, halfspace:axis,sign[,factor], segment:a,b)"),
        "segment": Field(_num_list, None, "shortcut for segment:a,b"),
        "R": Field(_posfloat, 200, "exhaustion radius"),
        "x": Field(_point, None, "point whose conditioned first step is reported (default origin)"),
        "tol": Field(_posfloat, 1e-13, "absolute residual tolerance"),
        "method": Field(_choice("sor", "direct"), "sor", "linear solver"),
    },
    "ratio": {
        "d": Field(_posint, 2), "killing": Field(_killing, "indicator:0:1"),
        "exhaustion": Field(_exhaustion, "ball"),
        "x": Field(_point, [2, 0]), "x0": Field(_point, [1, 0]),
        "R": Field(_num_list, [16, 32, 64, 128]),
    },
    "counterexample": {
        "alpha": Field(float, 1.6), "r": Field(_posint, 16),
        "R": Field(_num_list, [32, 64, 128]),
        "truncation": Field(_posfloat, 8.0, "half-plane cut-off radius as a multiple of R"),
    },
    "potential-kernel": {
        "max": Field(_posint, 5, "table covers |x|_inf <= max"),
    },
    "hitting": {
        "pairs": Field(_posint, 10, "number of random (x, y) pairs"),
        "radius": Field(_posint, 20, "pairs satisfy |x|, |y| <= radius"),
        "samples": Field(_posint, 10**5, "walks per pair"),
        "closure": Field(_posfloat, 60.0, "closure disc radius for the Monte Carlo"),
    },
    "green": {
        "d": Field(_posint, 3), "points": Field(_point_list, None, "points (default: axis points 1..8)"),
        "box": Field(_posfloat, 32.0, "killing box radius for the lattice solve"),
    },
    "snake-k": {
        "law": Field(str, "geometric"), "d": Field(_posint, 4),
        "points": Field(_point_list, None, "points (default: axis points 4, 8, 16)"),
        "samples": Field(_posint, 10**5), "node_cap": Field(_posint, 10**7),
        "cap_policy": Field(_choice("interval", "miss"), "interval"),
    },
    "snake-escape": {
        "law": Field(str, "geometric"), "d": Field(_posint, 4),
        "x": Field(_point, [4, 0, 0, 0]), "exhaustion": Field(_exhaustion, "ball"),
        "R": Field(_posfloat, 16), "samples": Field(_posint, 10**4),
        "node_cap": Field(_posint, 1000), "cap_policy": Field(_choice("interval", "miss"), "miss"),
        "include_exit_bush": Field(_bool, False),
        "compare_krw": Field(_bool, True, "also estimate with the killed walk on a tabulated k"),
        "table_samples": Field(_posint, 10**6), "exact_radius": Field(_posfloat, 4.0),
        "min_per_cell": Field(_posint, 20000),
    },
    "snake-condition": {
        "law": Field(str, "geometric"), "d": Field(_posint, 4),
        "x": Field(_point, [2, 0, 0, 0]), "R": Field(_posfloat, 8),
        "n": Field(_posint, 20, "spine length"), "table_samples": Field(_posint, 2 * 10**5),
        "node_cap": Field(_posint, 10**5),
    },
    "kbm-annulus": {
        "alpha": Field(float, 1.6), "radii": Field(_num_list, [4, 8, 16, 32]),
        "factor": Field(_posfloat, 2.0), "samples": Field(_posint, 10**5),
        "method": Field(_choice("auto", "direct", "chained"), "auto"),
        "bridge": Field(_bool, False),
    },
    "kbm-directional": {
        "alpha": Field(float, 1.0), "r": Field(_posfloat, 8), "n": Field(_posint, 3),
        "samples": Field(_posint, 10**6), "truncation": Field(_posfloat, 8.0),
        "bridge": Field(_bool, False), "replicas": Field(_posint, 20),
    },
    "trapping": {
        "killing": Field(_killing, "power:3"), "d": Field(_posint, 3),
        "cutoff": Field(_posfloat, 1e12),
    },
}

CURVES = {"ratio", "counterexample", "snake-k", "kbm-annulus"}


# ---------------------------------------------------------------------------
# config loading and validation

def _key_lines(text: str) -> dict:
    """Line number of each top-level key in a YAML/JSON document."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[k.value] = k.start_mark.line + 1
            if k.value == "config" and isinstance(v, yaml.MappingNode):
                for kk, _ in v.value:
                    out[kk.value] = kk.start_mark.line + 1
    return out


def load_document(path) -> tuple[dict, dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text)  # JSON is a subset of YAML
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: not valid YAML/JSON: {getattr(exc, 'problem', exc)}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    lines = _key_lines(text)
    if "config" in doc and isinstance(doc["config"], dict):   # a manifest from an earlier run
        inner = dict(doc["config"])
        inner.setdefault("experiment", doc.get("experiment"))
        doc = inner
    return doc, {k: f"{path}:{n}" for k, n in lines.items()}


def resolve(experiment: str, doc: dict | None = None, flags: dict | None = None,
            where: dict | None = None) -> dict:
    """Merge defaults, document and flags; convert and check every field."""
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    schema = {**SCHEMAS[experiment], **COMMON}
    doc = dict(doc or {})
    where = where or {}
    kind = doc.pop("experiment", None)
    if kind is not None and kind != experiment:
        raise ConfigError(f"{where.get('experiment', 'config')}: field 'experiment': document is for "
                          f"{kind!r}, command line asks for {experiment!r}")
    errors = []
    for k in doc:
        if k not in schema:
            errors.append(f"{where.get(k, 'config')}: field {k!r}: unknown for {experiment} "
                          f"(allowed: {', '.join(sorted(schema))})")
    cfg = {}
    for name, fld in schema.items():
        src, raw = "default", fld.default
        if name in doc:
            src, raw = where.get(name, "config"), doc[name]
        if flags and flags.get(name) is not None:
            src, raw = "command line", flags[name]
        if raw is None:
            if fld.required:
                errors.append(f"{src}: field {name!r} is required")
            cfg[name] = None
            continue
        try:
            cfg[name] = fld.conv(raw)
        except (TypeError, ValueError) as exc:
            errors.append(f"{src}: field {name!r}: {exc} (got {raw!r})")
    if not errors:
        errors += _cross_checks(experiment, cfg)
    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def _cross_checks(experiment, cfg) -> list:
    errs = []
    if experiment == "solve":
        if cfg["segment"] is not None:
            if len(cfg["segment"]) != 2:
                errs.append("field 'segment': expected two numbers b_minus,b_plus")
            elif cfg["exhaustion"] is not None:
                errs.append("fields 'segment' and 'exhaustion' are mutually exclusive")
        elif cfg["exhaustion"] is None:
            errs.append("field 'exhaustion' (or 'segment') is required")
        if cfg["x"] is not None and len(cfg["x"]) != cfg["d"]:
            errs.append(f"field 'x': expected {cfg['d']} coordinates")
    if experiment in ("ratio",):
        for f in ("x", "x0"):
            if len(cfg[f]) != cfg["d"]:
                errs.append(f"field {f!r}: expected {cfg['d']} coordinates")
    if experiment in ("counterexample", "kbm-annulus", "kbm-directional"):
        if not 0 <= cfg["alpha"] < 2:
            errs.append("field 'alpha': must lie in [0, 2)")
    if experiment in ("snake-escape", "snake-condition"):
        if len(cfg["x"]) != cfg["d"]:
            errs.append(f"field 'x': expected {cfg['d']} coordinates")
    if experiment == "kbm-annulus" and any(r < 1 for r in cfg["radii"]):
        errs.append("field 'radii': every radius must be >= 1")
    return errs


# ---------------------------------------------------------------------------
# experiments; each returns (csv header, csv rows, svg series or None, summary)

def run_solve(cfg, stream):
    from .harmonic import solve_escape
    d = cfg["d"]
    spec = cfg["exhaustion"] or "segment:{},{}".format(*cfg["segment"])
    k, ex = parse_killing(cfg["killing"], d), parse_exhaustion(spec)
    sol = solve_escape(k, ex, cfg["R"], d, tol=cfg["tol"], method=cfg["method"], cache_dir=cfg["cache"])
    x = tuple(cfg["x"] or [0] * d)
    law = sol.step_law(x)
    rows = [[*y, p] for y, p in sorted(law.items())]
    header = [f"y{i + 1}" for i in range(d)] + ["probability"]
    summary = {"u(x)": sol.value_at(x), "harmonic_residual": sol.harmonic_residual(),
               "sweeps": sol.sweeps, "points": len(sol.domain), "cache_hit": sol.meta.get("cache_hit")}
    if d == 1:
        summary["first_step_right"] = law[(x[0] + 1,)]
    return header, rows, None, summary


def run_ratio(cfg, stream):
    from .ratio import ratio_curve
    k = parse_killing(cfg["killing"], cfg["d"])
    curve = ratio_curve(k, parse_exhaustion(cfg["exhaustion"]), tuple(cfg["x"]), tuple(cfg["x0"]),
                        cfg["R"], cfg["d"], cache_dir=cfg["cache"])
    rows = [[R, q, g] for R, q, g in curve.rows()]
    series = {"ratio": (curve.radii, curve.ratios)}
    lim, err = curve.limit()
    return (["R", "ratio", "gap"], rows, series,
            {"limit": lim, "error_bound": err, "cauchy_gap": curve.cauchy_gap,
             "cache_hits": [i.get("cache_hit") for i in curve.info]})


def run_counterexample(cfg, stream):
    from .ratio import counterexample_experiment
    rep = counterexample_experiment(cfg["alpha"], cfg["r"], cfg["R"], cfg["truncation"],
                                    cache_dir=cfg["cache"])
    header = ["R", "rho_plus", "rho_minus", "symmetry_residual", "factor", "points"]
    rows = [[row[h] for h in header] for row in rep.rows]
    series = {"rho_plus": (rep.radii, rep.rho_plus), "rho_minus": (rep.radii, rep.rho_minus)}
    return header, rows, series, {"directional_gap": rep.directional_gap(),
                                  "seconds": [row["seconds"] for row in rep.rows]}


def run_potential_kernel(cfg, stream):
    from .harmonic import potential_kernel
    m = cfg["max"]
    rows = [[i, j, potential_kernel((i, j))] for i in range(-m, m + 1) for j in range(-m, m + 1)]
    return ["x1", "x2", "a"], rows, None, {"a(1,0)": potential_kernel((1, 0))}


def run_hitting(cfg, stream):
    from .harmonic import hitting_before_zero, hitting_before_zero_mc
    rng = stream.child(0).generator()
    rows, zs = [], []
    R = cfg["radius"]
    while len(rows) < cfg["pairs"]:
        x, y = (tuple(int(v) for v in rng.integers(-R, R + 1, 2)) for _ in range(2))
        if (0, 0) in (x, y) or x == y or math.hypot(*x) > R or math.hypot(*y) > R:
            continue
        exact = hitting_before_zero(x, y)
        est = hitting_before_zero_mc(x, y, cfg["samples"], stream.child(len(rows) + 1),
                                     cfg["closure"])
        zs.append(est.zscore(exact))
        rows.append([*x, *y, exact, est.mean, est.stderr, est.n])
    return (["x1", "x2", "y1", "y2", "closed_form", "estimate", "stderr", "n"], rows, None,
            {"max_z": max(zs)})


def run_green(cfg, stream):
    from .harmonic import green_function, green_oracle
    d = cfg["d"]
    pts = cfg["points"] or [[r] + [0] * (d - 1) for r in range(1, 9)]
    rows = []
    for p in pts:
        if len(p) != d:
            raise ConfigError(f"field 'points': {p} does not have {d} coordinates")
        rows.append([*p, green_function(p, d, cfg["box"]), green_oracle(p, d)])
    return [f"x{i + 1}" for i in range(d)] + ["lattice", "free_space"], rows, None, {}


def run_snake_k(cfg, stream):
    from .snake import OffspringLaw, estimate_k
    law, d = OffspringLaw.parse(cfg["law"]), cfg["d"]
    pts = cfg["points"] or [[r] + [0] * (d - 1) for r in (4, 8, 16)]
    rows, rad, vals = [], [], []
    for i, p in enumerate(pts):
        e = estimate_k(tuple(p), law, d, cfg["samples"], cfg["node_cap"], stream.child(i),
                       cap_policy=cfg["cap_policy"])
        r = math.sqrt(sum(c * c for c in p))
        rows.append([r, e.mean, e.stderr, e.n, e.info.get("lower", e.mean), e.info.get("upper", e.mean),
                     " ".join(map(str, p))])
        rad.append(r)
        vals.append(e.mean)
    return (["radius", "k_hat", "stderr", "n", "lower", "upper", "point"], rows,
            {"k_hat": (rad, vals)}, {})


def run_snake_escape(cfg, stream):
    from .snake import OffspringLaw, krw_escape_mc, snake_escape_probability, tabulate_k
    law, d = OffspringLaw.parse(cfg["law"]), cfg["d"]
    ex, x, R = parse_exhaustion(cfg["exhaustion"]), tuple(cfg["x"]), cfg["R"]
    direct = snake_escape_probability(x, law, d, ex, R, cfg["samples"], node_cap=cfg["node_cap"],
                                      stream=stream.child(0),
                                      include_exit_bush=cfg["include_exit_bush"],
                                      cap_policy=cfg["cap_policy"])
    rows = [["snake", direct.mean, direct.stderr, direct.n]]
    summary = {}
    if cfg["compare_krw"]:
        table = tabulate_k(law, d, R + 2, cfg["table_samples"], cfg["exact_radius"],
                           cfg["min_per_cell"], cfg["node_cap"], stream.child(1),
                           cap_policy=cfg["cap_policy"])
        krw = krw_escape_mc(table, x, ex, R, cfg["samples"], stream.child(2))
        rows.append(["krw", krw.mean, krw.stderr, krw.n])
        summary["z"] = direct.zscore(krw)
    return ["estimator", "estimate", "stderr", "n"], rows, None, summary


def run_snake_condition(cfg, stream):
    from .core import Ball
    from .harmonic import solve_escape
    from .ratio import solution_weight
    from .snake import OffspringLaw, sample_conditioned_snake, spine_transition_counts, tabulate_k
    law, d = OffspringLaw.parse(cfg["law"]), cfg["d"]
    table = tabulate_k(law, d, cfg["R"] + 2, cfg["table_samples"], node_cap=cfg["node_cap"],
                       stream=stream.child(0), cap_policy="miss")
    kill = table.as_killing()
    sol = solve_escape(kill, Ball(), cfg["R"], d, cache_dir=cfg["cache"])
    snake = sample_conditioned_snake(tuple(cfg["x"]), law, d, solution_weight(sol), kill, cfg["n"],
                                     stream.child(1), node_cap=cfg["node_cap"])
    rows = []
    for i, s in enumerate(snake.spine):
        size = len(snake.bushes[i].parent) if i < len(snake.bushes) else 0
        tries = int(snake.tries[i]) if i < len(snake.tries) else 0
        rows.append([i, *map(int, s), size, tries])
    header = ["i"] + [f"s{j + 1}" for j in range(d)] + ["bush_size", "tries"]
    return header, rows, None, {"transitions": len(spine_transition_counts(snake.spine)),
                                "capped_rejections": snake.capped_rejections}


def run_kbm_annulus(cfg, stream):
    from .kbm import KbmConfig, annulus_survival
    rows, xs, ys = [], [], []
    beta = (2 - cfg["alpha"]) / 4
    for i, r in enumerate(cfg["radii"]):
        c = KbmConfig(alpha=cfg["alpha"], dt=1e-2 * r * r, seed=cfg["seed"], bridge=cfg["bridge"])
        e = annulus_survival(c, r, cfg["factor"], cfg["samples"], cfg["method"], stream.child(i))
        rows.append([r, e.mean, e.stderr, e.n])
        if e.mean > 0:
            xs.append(r ** (2 * beta))
            ys.append(-math.log(e.mean))
    summary = {"beta": beta}
    if len(xs) > 2:
        summary["correlation"] = float(np.corrcoef(xs, ys)[0, 1])
    return ["r", "estimate", "stderr", "n"], rows, {"-ln p": (xs, ys)}, summary


def run_kbm_directional(cfg, stream):
    from .kbm import KbmConfig, directional_escape
    r = cfg["r"]
    c = KbmConfig(alpha=cfg["alpha"], dt=1e-2 * r * r, seed=cfg["seed"], bridge=cfg["bridge"])
    rows, est = [], {}
    for i, side in enumerate(("plus", "minus")):
        e = directional_escape(c, r, cfg["n"], side, cfg["samples"], truncation=cfg["truncation"],
                               splitting=True, stream=stream.child(i), replicas=cfg["replicas"])
        est[side] = e
        rows.append([side, e.mean, e.stderr, e.n])
    ratio = est["plus"].mean / est["minus"].mean if est["minus"].mean > 0 else float("inf")
    return ["side", "estimate", "stderr", "n"], rows, None, {"plus_over_minus": ratio}


def run_trapping(cfg, stream):
    d = cfg["d"]
    k = parse_killing(cfg["killing"], d)
    verdict = trapping_classifier(k, d, cfg["cutoff"])
    rows = [[cfg["killing"], d, verdict]]
    return ["killing", "d", "verdict"], rows, None, {"verdict": verdict}


RUNNERS = {
    "solve": run_solve, "ratio": run_ratio, "counterexample": run_counterexample,
    "potential-kernel": run_potential_kernel, "hitting": run_hitting, "green": run_green,
    "snake-k": run_snake_k, "snake-escape": run_snake_escape, "snake-condition": run_snake_condition,
    "kbm-annulus": run_kbm_annulus, "kbm-directional": run_kbm_directional, "trapping": run_trapping,
}

CURVE_AXES = {
    "ratio": ("R", "u(x)/u(x0)", True, False),
    "counterexample": ("R", "directional ratio", True, True),
    "snake-k": ("|x|", "k_hat", True, True),
    "kbm-annulus": ("r^(2 beta)", "-ln p", False, False),
}


def run(experiment: str, cfg: dict) -> dict:
    """Run a validated config and write manifest, CSV and (for curves) SVG."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stream = RandomStream(cfg["seed"], 0)
    t0 = time.perf_counter()
    header, rows, series, summary = RUNNERS[experiment](cfg, stream)
    stem = experiment.replace("-", "_")
    files = [report.write_csv(out / f"{stem}.csv", header, rows)]
    if series is not None:
        xl, yl, lx, ly = CURVE_AXES[experiment]
        files.append(report.line_plot(out / f"{stem}.svg", series, title=experiment, xlabel=xl, ylabel=yl,
                                      logx=lx, logy=ly, seed=cfg["seed"]))
    manifest = {
        "experiment": experiment,
        "version": __version__,
        "config": cfg,
        "summary": _jsonable(summary),
        "outputs": [Path(f).name for f in files],
        "seconds": time.perf_counter() - t0,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, out / "manifest.json")
    return manifest


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="krwlab", description="Killed random walk experiments.")
    p.add_argument("--version", action="version", version=f"krwlab {__version__}")
    sub = p.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name, help=f"run the {name} experiment", argument_default=None)
        sp.add_argument("--config", help="YAML/JSON config document or an earlier manifest.json")
        sp.add_argument("--seed", help="root seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--cache", help="cache directory for exact solves")
        sp.add_argument("-v", "--verbose", action="store_true")
        for fname, fld in schema.items():
            flag = "--" + fname.replace("_", "-")
            sp.add_argument(flag, dest=fname, help=f"{fld.help} (default {fld.default})".strip())
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("experiment", "config", "verbose")}
    try:
        doc, where = load_document(args.config) if args.config else ({}, {})
        cfg = resolve(args.experiment, doc, flags, where)
        manifest = run(args.experiment, cfg)
    except ConfigError as exc:
        print(f"krwlab {args.experiment}: invalid config\n{exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors carry their own messages
        print(f"krwlab {args.experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for k, v in manifest["summary"].items():
        print(f"{k}: {v}")
    print(f"wrote {', '.join(manifest['outputs'])} and manifest.json to {cfg['out']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
