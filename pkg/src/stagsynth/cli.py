"""Batch command-line interface.

Subcommands mirror the pipeline stages: ``fit`` (weights, effects, balance,
optional inference), ``frontier`` (imbalance trade-off over a nu grid),
``placebo`` (in-time placebo re-estimation), ``trim`` (drop worst-fit treated
units), and ``simulate`` (Monte Carlo study). Every output file embeds the
fully resolved run configuration; given the same flags and seed the outputs
are byte-identical.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 solver
non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .effects import estimate_effects, placebo_in_time, trim_and_refit
from .errors import StagsynthError
from .inference import jackknife_se, wild_bootstrap_ci
from .panel import default_config, load_panel
from .simulate import (DgpSpec, EstimatorSpec, SelectionSpec, calibrate,
                       default_estimators, default_selection, run_monte_carlo)
from .solver import SolveOptions, fit_panel
from .tuning import frontier_rows, trace_frontier

_VERSION_NOTES = (
    f"stagsynth {__version__}\n"
    "conventions: pooled imbalance divides by the full treated count J at "
    "every lag; bootstrap intervals use the basic orientation "
    "[att - q_hi, att - q_lo]; the post-treatment average runs over event "
    "times 0..K."
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(_VERSION_NOTES)
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        merged = merge_config(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(merged)
    except StagsynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagsynth",
        description="Partially pooled synthetic control for staggered adoption")
    parser.add_argument("--version", action="store_true",
                        help="print version and estimation conventions")
    sub = parser.add_subparsers(dest="command")

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="long-format CSV")
            p.add_argument("--schema", default=None,
                           help="column map, e.g. unit=state,time=year")
        p.add_argument("--output-dir", default=".", help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON config file; flags override its entries")
        p.add_argument("--nu", default=None,
                       help="pooling weight in [0,1], or 'heuristic'")
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--xi", type=float, default=None)
        p.add_argument("--intercept", action=argparse.BooleanOptionalAction,
                       default=True)
        p.add_argument("--cohorts", action="store_true", default=False)
        p.add_argument("--lags", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None,
                       help="post-treatment horizon K")
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--max-iter", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--strict", action="store_true",
                       help="exit 3 when the solver does not converge")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for replicate-style loops")

    p_fit = sub.add_parser("fit", help="fit weights and estimate effects")
    common(p_fit)
    p_fit.add_argument("--inference", choices=["none", "wild_bootstrap",
                                               "jackknife"], default="none")
    p_fit.add_argument("--bootstrap", type=int, default=1000, dest="B")
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.set_defaults(func=cmd_fit)

    p_fr = sub.add_parser("frontier", help="trace the balance frontier")
    common(p_fr)
    p_fr.add_argument("--grid", type=int, default=None,
                      help="number of evenly spaced nu points")
    p_fr.set_defaults(func=cmd_frontier)

    p_pl = sub.add_parser("placebo", help="in-time placebo estimates")
    common(p_pl)
    p_pl.add_argument("--shift", type=int, required=True)
    p_pl.set_defaults(func=cmd_placebo)

    p_tr = sub.add_parser("trim", help="drop worst-fit treated units and refit")
    common(p_tr)
    p_tr.add_argument("--drop", type=int, required=True)
    p_tr.set_defaults(func=cmd_trim)

    p_sim = sub.add_parser("simulate", help="Monte Carlo study")
    common(p_sim, needs_input=False)
    p_sim.add_argument("--dgp", choices=["twfe", "factor", "ar"],
                       required=True)
    p_sim.add_argument("--reps", type=int, default=200)
    p_sim.add_argument("--bootstrap", type=int, default=1000, dest="B")
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--coverage", action="store_true",
                       help="track wild-bootstrap coverage per event time")
    p_sim.add_argument("--calibrate-from", default=None,
                       help="CSV panel to calibrate the process from")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def merge_config(args) -> argparse.Namespace:
    """Overlay defaults from --config; explicit flags win."""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise ValueError(f"unknown config entry {key!r}")
            if _flag_was_defaulted(args, attr):
                setattr(args, attr, value)
    if getattr(args, "nu", None) is not None:
        if str(args.nu).lower() == "heuristic":
            args.nu = None
        else:
            args.nu = float(args.nu)
            if not 0.0 <= args.nu <= 1.0:
                raise ValueError("--nu must be in [0, 1] or 'heuristic'")
    return args


_DEFAULTS = {"nu": None, "lam": None, "xi": None, "intercept": True,
             "cohorts": False, "lags": None, "horizon": None, "tol": 1e-10,
             "max_iter": 10_000, "seed": 0, "strict": False, "threads": 1,
             "inference": "none", "B": 1000, "alpha": 0.05, "grid": None,
             "output_dir": ".", "schema": None}


def _flag_was_defaulted(args, attr) -> bool:
    return getattr(args, attr, None) == _DEFAULTS.get(attr, None)


def resolved_config(args) -> dict:
    """The resolved run configuration embedded in every output file."""
    skip = {"func", "config", "version", "command"}
    out = {"command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        out[key] = value
    return out


def _parse_schema(text):
    if not text:
        return None
    pairs = [kv.split("=", 1) for kv in text.split(",")]
    return {k.strip(): v.strip() for k, v in pairs}


def _load(args):
    panel = load_panel(args.input, schema=_parse_schema(args.schema))
    cfg = default_config(panel, K=args.horizon, lags=args.lags)
    options = SolveOptions(nu=args.nu, lam=args.lam, xi=args.xi,
                           intercept=args.intercept,
                           cohort_mode=args.cohorts, tol=args.tol,
                           max_iter=args.max_iter)
    return panel, cfg, options


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               allow_nan=False) + "\n")


def _sanitize(obj):
    """Replace non-finite floats with None so the JSON stays strict."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def cmd_fit(args) -> int:
    panel, cfg, options = _load(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_cfg = resolved_config(args)
    fit = fit_panel(panel, cfg, options)
    est = estimate_effects(panel, cfg, fit)
    _write_json(out / "fit.json", _sanitize({
        "run_config": run_cfg,
        "fit": fit.to_dict(unit_ids=panel.unit_ids),
    }))
    _write_json(out / "balance.json", _sanitize({
        "run_config": run_cfg,
        "balance": fit.balance.to_dict(),
        "cohort_balance": None if fit.cohort_balance is None
        else fit.cohort_balance.to_dict(),
    }))
    with open(out / "effects.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_time", "att", "n_units"])
        writer.writerows(est.to_rows())
    _write_json(out / "effects.json", _sanitize({
        "run_config": run_cfg, "effects": est.to_dict()}))
    line = f"ATT = {est.att:+.6f} (nu = {fit.options.nu:.4f})"
    if args.inference != "none":
        results = []
        for k in range(cfg.K + 1):
            if args.inference == "wild_bootstrap":
                res = wild_bootstrap_ci(panel, cfg, fit, k, B=args.B,
                                        alpha_level=args.alpha,
                                        seed=args.seed)
            else:
                res = jackknife_se(panel, cfg, fit.options, k,
                                   alpha_level=args.alpha)
            results.append(res.to_dict())
            print(f"ATT_{k}  {res.att_k:+.6f}  "
                  f"[{res.ci_lower:+.6f}, {res.ci_upper:+.6f}]")
        _write_json(out / "inference.json", _sanitize({
            "run_config": run_cfg, "results": results}))
    print(line)
    if args.strict and not fit.converged:
        print("solver did not converge", file=sys.stderr)
        return 3
    return 0


def cmd_frontier(args) -> int:
    panel, cfg, options = _load(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = None
    if args.grid is not None:
        if args.grid < 1:
            raise ValueError("--grid needs at least 1 point")
        # evenly spaced interior points; the endpoints are always added
        grid = np.linspace(0.0, 1.0, args.grid + 2)[1:-1]
    points = trace_frontier(panel, cfg, nu_grid=grid, options=options)
    with open(out / "frontier.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nu", "q_sep", "q_pool", "q_sep_norm", "q_pool_norm",
                         "att"])
        writer.writerows(frontier_rows(points))
    _write_json(out / "frontier.json", _sanitize({
        "run_config": resolved_config(args),
        "points": [vars(p) for p in points]}))
    print(f"frontier traced at {len(points)} points")
    return 0


def cmd_placebo(args) -> int:
    panel, cfg, options = _load(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    est = placebo_in_time(panel, cfg, args.shift, options)
    with open(out / "placebo.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_time", "att", "n_units"])
        writer.writerows(est.to_rows())
    _write_json(out / "placebo.json", _sanitize({
        "run_config": resolved_config(args), "effects": est.to_dict()}))
    print(f"placebo ATT (shift {args.shift}) = {est.att:+.6f}")
    return 0


def cmd_trim(args) -> int:
    panel, cfg, options = _load(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    est, dropped = trim_and_refit(panel, cfg, args.drop, options)
    with open(out / "trim.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_time", "att", "n_units"])
        writer.writerows(est.to_rows())
    _write_json(out / "trim.json", _sanitize({
        "run_config": resolved_config(args), "dropped": dropped,
        "effects": est.to_dict()}))
    print(f"trimmed ATT (dropped {len(dropped)}) = {est.att:+.6f}")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.calibrate_from:
        base = load_panel(args.calibrate_from)
        dgp = calibrate(base, args.dgp)
    else:
        dgp = DgpSpec(kind=args.dgp)
    sel = default_selection(args.dgp)
    estimators = list(default_estimators())
    if args.coverage:
        estimators = [
            EstimatorSpec(name=e.name, kind=e.kind, nu=e.nu,
                          intercept=e.intercept,
                          inference=(e.name == "scm_heuristic"))
            for e in estimators]
    reports, rows = run_monte_carlo(
        dgp, sel, estimators, reps=args.reps, seed=args.seed,
        K=args.horizon if args.horizon is not None else 9,
        B=args.B, alpha_level=args.alpha)
    fields = sorted({k for r in rows for k in r})
    with open(out / "replicates.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    _write_json(out / "mc_report.json", _sanitize({
        "run_config": resolved_config(args),
        "dgp": dgp.to_dict(),
        "selection": sel.to_dict(),
        "reports": {name: rep.to_dict() for name, rep in reports.items()},
    }))
    for name, rep in reports.items():
        print(f"{name}: bias={rep.bias_att:+.5f} mad={rep.mad_att:.5f} "
              f"rmse={rep.rmse_att:.5f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
