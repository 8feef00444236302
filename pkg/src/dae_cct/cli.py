"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure or
no solution, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import cct as cct_mod
from .config import ConfigError, ScenarioConfig, grid
from .geometry import (
    ContinuationError,
    classify_singular_point,
    locate_pseudo_equilibria,
    trace_singular_set,
    write_classification_csv,
)
from .model import NoFoldError, Stage, smib_singular_locus
from .numerics import NotSingularError
from .sensitivity import integrate_variational
from .simulator import (
    InconsistentInitialError,
    fmt,
    integrate_fault_with_shadow,
    integrate_stage,
    pre_fault_sep,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4

NUMERIC_ERRORS = (
    ArithmeticError,  # covers ConvergenceError, SingularMatrixError, fold/transversality errors
    NotSingularError,
    NoFoldError,
    InconsistentInitialError,
    cct_mod.BracketError,
)


class UsageError(Exception):
    pass


def _emit(args, obj: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(obj, sort_keys=False))
    else:
        print("\n".join(lines))


def _num(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_num(u) for u in v]
    if isinstance(v, (float, np.floating)):
        return float(fmt(v))
    return v


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    out = Path(args.out or cfg.output.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def constraint_mesh(params, nx1: int = 61, ny: int = 61):
    """Grid of ``(x1, y, g_post)`` over the upper-half constraint surface."""
    rows = []
    for x1 in np.linspace(0.0, math.pi / 2, nx1):
        for y in np.linspace(0.0, 1.2, ny):
            g = params.E * y * math.cos(x1) / params.X - y * y / params.X - params.Ql
            rows.append((fmt(x1), fmt(y), fmt(g)))
    return rows


def cmd_simulate(args, cfg):
    sc, st = cfg.scenario(), cfg.settings()
    out = _out_dir(args, cfg)
    stage = Stage.parse(args.stage)
    if stage is Stage.FAULT:
        traj, event = integrate_fault_with_shadow(sc, st, t_max=args.t_end)
    else:
        sep = pre_fault_sep(sc)
        t_end = args.t_end if args.t_end is not None else 5.0
        traj = integrate_stage(sc.model, stage, sep.x_s, sep.y_s, sc.p, t_end, st.h, st,
                               detect_equilibrium=False)
        event = None
    traj_path = out / "trajectory.csv"
    traj.to_csv(traj_path)
    mesh_path = out / "constraint_surface.csv"
    _write_rows(mesh_path, ("x1", "y", "g_post"), constraint_mesh(sc.params))
    obj = {"trajectory": str(traj_path), "constraint_surface": str(mesh_path),
           "termination": traj.termination.value, "t_end": _num(traj.t_end),
           "samples": len(traj)}
    if event is not None:
        obj.update(t_fold=_num(event.t_fold), x_cl=_num(event.x_cl), y_post_cl=_num(event.y_post_cl))
    _emit(args, obj, [f"{k}: {v}" for k, v in obj.items()])
    return EXIT_OK


def cmd_cct(args, cfg):
    sc, st = cfg.scenario(), cfg.settings()
    method = args.method or cfg.cct.get("method", "event")
    criterion = args.criterion or cfg.cct.get("criterion", "clearing")
    if method == "event":
        res = cct_mod.find_cct_event(sc, st, criterion=criterion)
    else:
        t_lo = cfg.cct.get("t_lo", 0.0)
        t_hi = cfg.cct.get("t_hi", 3.0)
        res = cct_mod.find_cct_bisection(sc, t_lo, t_hi, cfg.cct.get("tol", 1e-4), st, criterion=criterion)
    obj = {"t_cct": _num(res.t_cct), "method": res.method, "mechanism": res.mechanism,
           "criterion": cct_mod.Criterion(res.criterion).value, "verified": res.verified,
           "mechanism_mismatch": res.mechanism_mismatch}
    if res.fold_event is not None:
        obj["x_cl"] = _num(res.fold_event.x_cl)
        obj["y_post_cl"] = _num(res.fold_event.y_post_cl)
    if res.interval is not None:
        obj["interval"] = _num(list(res.interval))
    _emit(args, obj, [f"{k}: {v}" for k, v in obj.items()])
    if res.mechanism_mismatch:
        print("warning: bracketing probes do not show fold-at-clearing under criterion "
              f"{obj['criterion']!r}; the result is the shadow-branch fold time", file=sys.stderr)
    return EXIT_OK


def _param_name(cfg, arg, section):
    name = arg or section.get("parameter")
    if name is None:
        raise UsageError("no parameter given (use --param or the config)")
    names = cfg.params().names()
    if name not in names:
        raise UsageError(f"unknown parameter {name!r}; expected one of {list(names)}")
    return name


def cmd_sensitivity(args, cfg):
    sc, st = cfg.scenario(), cfg.settings()
    name = _param_name(cfg, args.param, cfg.sensitivity)
    res = cct_mod.find_cct_event(sc, st, verify=False)
    b = cct_mod.cct_sensitivity(sc, name, res, st)
    out = _out_dir(args, cfg)
    obj = {"param_name": name, "param_value": _num(getattr(sc.params, name)), "t_cct": _num(res.t_cct),
           "dcct_dp": _num(b.dcct_dp)}
    for key in ("A1", "B1", "B2", "B3", "C1", "C2", "v_star"):
        obj[key] = _num(np.asarray(getattr(b, key)).tolist())
    obj.update(sigma_min=_num(b.sigma_min), numerator=_num(b.numerator), denominator=_num(b.denominator))
    if args.validate_fd:
        delta = cfg.sensitivity.get("fd_delta", 1e-3)
        fd = cct_mod.fd_cct_derivative(sc, name, delta, st)
        obj["fd_dcct_dp"] = _num(fd)
        obj["fd_rel_error"] = _num(abs(b.dcct_dp - fd) / max(abs(fd), 1e-300))
    flat = {k: v for k, v in obj.items()}
    header, row = [], []
    for k, v in flat.items():
        arr = np.asarray(v, dtype=object).ravel() if isinstance(v, list) else None
        if arr is None:
            header.append(k)
            row.append(fmt(v) if isinstance(v, float) else v)
        else:
            for j, u in enumerate(arr):
                header.append(f"{k}_{j + 1}")
                row.append(fmt(u))
    _write_rows(out / "sensitivity.csv", header, [row])
    var = integrate_variational(sc, name, t_end=res.t_cct, settings=st, trajectory=res.trajectory)
    var.to_csv(out / "variational.csv")
    _emit(args, obj, [f"{k}: {v}" for k, v in obj.items()])
    return EXIT_OK


def cmd_sweep(args, cfg):
    sc, st = cfg.scenario(), cfg.settings()
    name = _param_name(cfg, args.param, cfg.sweep)
    if args.values is not None:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    elif args.grid is not None:
        try:
            start, stop, step = (float(v) for v in args.grid.split(":"))
        except ValueError:
            raise UsageError("--grid expects start:stop:step") from None
        values = grid(start, stop, step)
    else:
        values = cfg.sweep_values()
    if not values:
        raise UsageError("sweep grid is empty")
    rows = cct_mod.sweep(sc, name, values, st, jobs=args.jobs)
    out = _out_dir(args, cfg)
    path = out / "sweep.csv"
    cct_mod.write_sweep_csv(rows, path)
    if args.json:
        print(json.dumps({"sweep": str(path), "rows": [dict(zip(cct_mod.SWEEP_COLUMNS, r.cells())) for r in rows]}))
    else:
        print(",".join(cct_mod.SWEEP_COLUMNS))
        for r in rows:
            print(",".join(r.cells()))
    return EXIT_OK


def _parse_seed(text: str, dim: int):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"malformed seed {text!r}") from None
    if len(vals) != dim or not all(map(math.isfinite, vals)):
        raise UsageError(f"seed {text!r} must have {dim} finite comma-separated values")
    return vals


def cmd_classify(args, cfg):
    sc = cfg.scenario()
    model, p = sc.model, sc.p
    n, m = model.n, model.m
    arc = cfg.classify.get("arc_step", 0.05)
    count = int(cfg.classify.get("count", 9))
    seeds = [_parse_seed(s, n + m) for s in (args.seed or [])]
    seeds += [list(map(float, s)) for s in cfg.classify.get("seeds", [])]
    for s in seeds:
        if len(s) != n + m:
            raise UsageError(f"seed {s} must have {n + m} values")
    if args.auto:
        x1s, ys = smib_singular_locus(sc.params)
        seeds.append([x1s, 0.0, ys])
    if not seeds:
        raise UsageError("no seeds: pass --seed x1,x2,y or --auto")
    rows, errors = [], []
    for s in seeds:
        x, y = np.array(s[:n]), np.array(s[n:])
        first = classify_singular_point(model, Stage.POST, x, y, p)
        rows.append(first)
        if not first.is_singular:
            continue
        try:
            back = trace_singular_set(model, Stage.POST, p, (x, y), -arc, count)[1:]
            fwd = trace_singular_set(model, Stage.POST, p, (x, y), arc, count)[1:]
        except ContinuationError as exc:
            errors.append(f"seed {s}: {exc}")
            continue
        line = list(reversed(back)) + [(first.x, first.y)] + fwd
        rows.extend(classify_singular_point(model, Stage.POST, xx, yy, p) for xx, yy in back + fwd)
        for xx, yy in locate_pseudo_equilibria(model, Stage.POST, p, line):
            z = np.concatenate([xx, yy])
            if any(np.linalg.norm(np.concatenate([r.x, r.y]) - z) < 1e-9 for r in rows):
                continue
            rows.append(classify_singular_point(model, Stage.POST, xx, yy, p))
    out = _out_dir(args, cfg)
    path = out / "classification.csv"
    write_classification_csv(rows, path)
    obj = {"classification": str(path), "rows": len(rows),
           "categories": {c: sum(r.category.value == c for r in rows)
                          for c in ("Regular", "Singular", "SemiSingular", "PseudoEP")},
           "errors": errors}
    _emit(args, obj, [f"{k}: {v}" for k, v in obj.items()])
    for e in errors:
        print(f"continuation error: {e}", file=sys.stderr)
    return EXIT_NUMERIC if errors and len(errors) == len(seeds) else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "cct": cmd_cct, "sensitivity": cmd_sensitivity,
            "sweep": cmd_sweep, "classify": cmd_classify}


def build_parser() -> argparse.ArgumentParser:
    def global_flags():
        # fresh parser per use: parents share action objects, and the
        # subcommand copies must keep SUPPRESS so they do not reset the top level
        common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
        common.add_argument("--config", help="scenario JSON file (defaults: base SMIB case)")
        common.add_argument("--out", help="output directory")
        common.add_argument("--jobs", type=int, help="worker processes for sweeps (default: CPU count)")
        common.add_argument("--json", action="store_true", help="machine-readable output")
        return common

    common = global_flags()
    ap = argparse.ArgumentParser(prog="dae-cct", parents=[global_flags()],
                                 description="Fold-type critical clearing time and its sensitivity for staged DAEs.")
    ap.set_defaults(config=None, out=None, jobs=os.cpu_count() or 1, json=False)
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="trajectory and constraint-surface CSVs")
    s.add_argument("--stage", default="fault", choices=["pre", "fault", "post"])
    s.add_argument("--t-end", type=float, default=None)
    s = sub.add_parser("cct", parents=[common], help="critical clearing time")
    s.add_argument("--method", choices=["event", "bisection"])
    s.add_argument("--criterion", choices=[c.value for c in cct_mod.Criterion])
    s = sub.add_parser("sensitivity", parents=[common], help="analytic CCT sensitivity")
    s.add_argument("--param")
    s.add_argument("--validate-fd", action="store_true")
    s = sub.add_parser("sweep", parents=[common], help="CCT and slope over a parameter grid")
    s.add_argument("--param")
    s.add_argument("--values", help="comma-separated values")
    s.add_argument("--grid", help="start:stop:step (inclusive)")
    s = sub.add_parser("classify", parents=[common], help="classify singular-surface points")
    s.add_argument("--seed", action="append", help="x1,...,xn,y1,...,ym (repeatable)")
    s.add_argument("--auto", action="store_true", help="seed at the closed-form SMIB fold")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
        cfg.validate()
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
