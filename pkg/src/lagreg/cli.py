"""Command line interface: ``lagreg generate|register|flow|check|metrics``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure,
3 check-suite failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .characteristics import FlowError, flow
from .checks import SUITES, run_checks
from .config import GENERATORS, ConfigError, load_config, load_inputs, to_registration_config
from .field import ImageField
from .fileio import FieldFormatError, PGMError, atomic_write_text, export_pgm, load_field, save_field
from .grid import Grid, cell_centers
from .objective import RegistrationProblem
from .pde_solve import KERNELS, advect, transport_mass
from .problems import dice, distance_reduction, jacobian_field, transform_labels
from .solver import log_to_csv, multilevel_register

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("lagreg")


class UsageError(Exception):
    pass


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    T, R = GENERATORS[args.name](args.m, intensity=args.intensity)
    out = _outdir(args.out)
    vrange = (0.0, args.intensity)
    for tag, f in (("template", T), ("reference", R)):
        save_field(out / f"{args.name}_{tag}.field", f, meta={"generator": args.name})
        export_pgm(f, out / f"{args.name}_{tag}.pgm", vrange=None if args.name == "gaussian_mp" else vrange)
        print(out / f"{args.name}_{tag}.field")
    return EXIT_OK


def _guard_outputs(targets, inputs):
    resolved = {Path(p).resolve() for p in inputs}
    for t in targets:
        if Path(t).resolve() in resolved:
            raise UsageError(f"refusing to overwrite input file {t}")


def cmd_register(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.resolve(cfg.output)
    T, R = load_inputs(cfg)
    rc = to_registration_config(cfg, T, R)
    names = {k: out / f"{k}.field" for k in ("velocity", "endpoints", "u1", "detjac")}
    names["log"] = out / "iterations.csv"
    names["summary"] = out / "summary.json"
    inputs = [args.config] + ([cfg.resolve(cfg.template), cfg.resolve(cfg.reference)] if cfg.template else [])
    _guard_outputs(names.values(), inputs)
    _outdir(out)

    res = multilevel_register(rc)
    atomic_write_text(names["log"], log_to_csv(res.log))
    summary = {
        "config_hash": cfg.digest(),
        "wall_time": res.wall_time,
        "levels": [{"stop_reason": lev.stop_reason, "iterations": lev.iterations} for lev in res.levels],
    }
    if res.error is not None:
        summary.update(failed_level=res.failed_level, error=res.error)
        if res.v is not None:
            save_field(names["velocity"], res.v)
        atomic_write_text(names["summary"], json.dumps(summary, indent=2) + "\n")
        print(f"registration failed on level {res.failed_level}: {res.error}", file=sys.stderr)
        return EXIT_NUMERIC

    g = res.problem.T.grid
    det, dmin, dmax = jacobian_field(res.y, g)
    last = res.log[-1]
    summary.update(
        J=last.J, D=last.D, S=last.S,
        reduction=distance_reduction(res.problem, res.v),
        det_min=dmin, det_max=dmax,
    )
    save_field(names["velocity"], res.v)
    save_field(names["endpoints"], res.y, grid=g)
    save_field(names["u1"], ImageField(g, res.u1))
    save_field(names["detjac"], ImageField(g, det))
    atomic_write_text(names["summary"], json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_flow(args) -> int:
    v = load_field(args.velocity).to_velocity()
    T = load_field(args.image).to_image()
    _guard_outputs([args.out], [args.velocity, args.image])
    if args.model == "advect":
        u1, _ = advect(T, v, args.N)
    else:
        delta = tuple(args.delta_factor * h for h in T.grid.h)
        u1, _ = transport_mass(T, v, args.N, delta=delta, shape=args.kernel)
    save_field(args.out, ImageField(T.grid, u1))
    if args.endpoints:
        t0, t1 = (1.0, 0.0) if args.model == "advect" else (0.0, 1.0)
        save_field(args.endpoints, flow(v, cell_centers(T.grid), t0, t1, args.N).y, grid=T.grid)
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks(args.suite or None)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def _points_grid(ff) -> tuple[np.ndarray, Grid]:
    if ff.grid is None:
        raise UsageError("end-point file carries no grid")
    return ff.to_points(), ff.grid


def cmd_metrics(args) -> int:
    out = {}
    y = g = None
    if args.endpoints:
        y, g = _points_grid(load_field(args.endpoints))
        mask = None
        if args.mask:
            mask = load_field(args.mask).to_image().data != 0
        _, dmin, dmax = jacobian_field(y, g, mask)
        out.update(det_min=dmin, det_max=dmax)
    if args.labels_template or args.labels_reference:
        if not (args.labels_template and args.labels_reference and y is not None):
            raise UsageError("dice needs --labels-template, --labels-reference and --endpoints")
        A = load_field(args.labels_template).to_image()
        B = load_field(args.labels_reference).to_image()
        warped = transform_labels(A, y)
        labels = args.label or [None]
        out["dice"] = {str(lab): dice(warped, B, lab) for lab in labels}
    if args.velocity:
        if not (args.template and args.reference):
            raise UsageError("reduction needs --template, --reference and --velocity")
        T = load_field(args.template).to_image()
        R = load_field(args.reference).to_image()
        v = load_field(args.velocity).to_velocity()
        prob = RegistrationProblem(T, R, v.grid, nt=v.nt, N=args.N, model=args.model, kernel=args.kernel)
        out["reduction"] = distance_reduction(prob, v)
    if not out:
        raise UsageError("nothing to compute; give --endpoints and/or --velocity")
    text = json.dumps(out, indent=2)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagreg", description="Lagrangian diffeomorphic image registration")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver iterations")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark pair")
    g.add_argument("name", choices=sorted(GENERATORS))
    g.add_argument("--m", type=int, default=128, help="cells per axis")
    g.add_argument("--intensity", type=float, default=1.0, help="peak gray value")
    g.add_argument("--out", default=".", help="output directory")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("register", help="run a multilevel registration from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_register)

    f = sub.add_parser("flow", help="transform a saved image with a saved velocity")
    f.add_argument("--velocity", required=True)
    f.add_argument("--image", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--model", choices=("advect", "mass"), default="advect")
    f.add_argument("--N", type=int, default=20, help="time steps")
    f.add_argument("--kernel", choices=KERNELS, default="hat")
    f.add_argument("--delta-factor", type=float, default=1.0)
    f.add_argument("--endpoints", help="also write the characteristic end points")
    f.set_defaults(func=cmd_flow)

    c = sub.add_parser("check", help="run derivative, order and mass self-tests")
    c.add_argument("--suite", action="append", choices=sorted(SUITES))
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("metrics", help="Jacobian, Dice and distance reduction from saved artifacts")
    m.add_argument("--endpoints")
    m.add_argument("--mask")
    m.add_argument("--labels-template")
    m.add_argument("--labels-reference")
    m.add_argument("--label", type=float, action="append")
    m.add_argument("--template")
    m.add_argument("--reference")
    m.add_argument("--velocity")
    m.add_argument("--model", choices=("advect", "mass"), default="advect")
    m.add_argument("--N", type=int, default=20)
    m.add_argument("--kernel", choices=KERNELS, default="hat")
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, FieldFormatError, PGMError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
