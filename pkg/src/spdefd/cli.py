"""Command line driver.

    spdefd [--config FILE] SUBCOMMAND [flags]

Exit codes: 0 pass, 1 gate failure, 2 configuration error, 3 solver failure.

The config file is sectioned key=value text.  ``[experiment]`` holds
ExperimentConfig fields, ``[gate]`` optional pass criteria, ``[oracle]``
the oracle settings, and ``[problem]`` an inline problem definition.
Command line flags override the file.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import datetime
import logging
import sys
from pathlib import Path

from . import report as rep
from .characteristics import FlowConfig
from .cutoff import CutoffFn
from .errors import ConfigError, DomainError, SpdeError
from .experiments import (
    ExperimentConfig,
    run_convergence_space,
    run_convergence_time,
    run_localization,
    run_oracle_check,
)
from .noise import generate
from .richardson import weights
from .solver import run, solver_grid

EXIT_PASS, EXIT_GATE, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

FLAG_FIELDS = {"problem": str, "h": float, "tau": float, "R": float, "nu": float, "r": int,
               "samples": int, "seed": int}
EXTRA_FIELDS = {"T": float, "levels": int, "tau_levels": int, "ref_extra": int, "workers": int,
                "cutoff": str, "tau_rule": str, "R_ref": float, "tol": float}


def _parse_value(kind, text):
    if kind is tuple:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    return kind(text)


def _field_types():
    hints = {"problem": str, "problem_text": str, "T": float, "R": float, "nu": float, "cutoff": str,
             "h": float, "levels": int, "r": int, "tau": float, "tau_rule": str, "tau_levels": int,
             "ref_extra": int, "radii": tuple, "R_ref": float, "samples": int, "seed": int,
             "workers": int, "tol": float}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    return {k: v for k, v in hints.items() if k in names}


def read_config_file(path):
    """Sections of a key=value config file as plain dicts."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        cp.read_string(text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    sections = {s: dict(cp[s]) for s in cp.sections()}
    if "problem" in sections:
        # hand the raw problem section to the problem parser untouched
        lines = ["[problem]"] + [f"{k} = {v}" for k, v in sections["problem"].items()]
        sections["problem_text"] = "\n".join(lines) + "\n"
    return sections


def build_config(args):
    sections = read_config_file(args.config) if args.config else {}
    types = _field_types()
    values = {}
    for key, text in sections.get("experiment", {}).items():
        if key not in types:
            raise ConfigError(f"unknown experiment key {key!r}")
        try:
            values[key] = _parse_value(types[key], text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc
    if "problem_text" in sections:
        values["problem_text"] = sections["problem_text"]
        values.setdefault("problem", "custom")
    for key in list(FLAG_FIELDS) + list(EXTRA_FIELDS):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "radii", None):
        values["radii"] = _parse_value(tuple, args.radii)
    try:
        cfg = ExperimentConfig(**values)
        cfg.build_problem()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, sections


def _gate(args, sections, name, kind=float):
    v = getattr(args, name, None)
    if v is None and name in sections.get("gate", {}):
        v = _parse_value(kind, sections["gate"][name])
    return v


def _write(report, args, meta_extra=None):
    if meta_extra:
        report.metadata.update(meta_extra)
    if args.timestamps:
        report.metadata["generated"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    fmts = rep.FORMATS if args.format == "all" else (args.format,)
    if args.out:
        for fmt in fmts:
            path = rep.emit(report, fmt, args.out)
            print(f"wrote {path}")
    else:
        sys.stdout.write(rep.render(report, fmts[0]))


def _summarise(report):
    slope = report.slope
    text = "undefined" if slope is None else f"{slope:.4f}"
    print(f"{report.kind}: slope={text} over levels {report.fit.get('levels')}, "
          f"failed samples={report.metadata.get('failed_samples', 0)}", file=sys.stderr)


def _study(runner, args):
    cfg, sections = build_config(args)
    report = runner(cfg)
    _write(report, args)
    _summarise(report)
    if not report.valid:
        return EXIT_SOLVER
    lo, hi = _gate(args, sections, "slope_min"), _gate(args, sections, "slope_max")
    if lo is not None or hi is not None:
        s = report.slope
        if s is None or (lo is not None and s < lo) or (hi is not None and s > hi):
            return EXIT_GATE
    if _gate(args, sections, "decreasing", bool):
        errs = [r.mse for r in report.rows]
        if not all(b < a for a, b in zip(errs, errs[1:])):
            return EXIT_GATE
    return EXIT_PASS


def cmd_converge_space(args):
    return _study(run_convergence_space, args)


def cmd_converge_time(args):
    return _study(run_convergence_time, args)


def cmd_localize(args):
    return _study(run_localization, args)


def cmd_solve(args):
    cfg, _ = build_config(args)
    problem = cfg.build_problem()
    zeta = CutoffFn(cfg.R, cfg.cutoff)
    grid = solver_grid(problem.stencil, cfg.h, zeta)
    n = int(round(problem.T / cfg.tau))
    if n < 1 or abs(n * cfg.tau - problem.T) > 1e-9 * problem.T:
        raise ConfigError(f"T = {problem.T} is not a multiple of tau = {cfg.tau}")
    noise = generate(cfg.seed, args.sample, n, cfg.tau, problem.discrete.noise_channels)
    traj = run(problem, zeta, grid, noise, store=False, tol=cfg.tol)
    text = rep.field_csv(grid, traj.values[-1])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "solve.csv"
        path.write_text(text, encoding="utf-8")
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def _parse_points(text, T):
    pts = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            t, x = item.split(":", 1)
        else:
            t, x = T, item
        pts.append((float(t), tuple(float(v) for v in str(x).split(","))))
    if not pts:
        raise ConfigError("no oracle points given")
    return pts


def cmd_oracle_check(args):
    cfg, sections = build_config(args)
    osec = sections.get("oracle", {})
    T = cfg.build_problem().T
    try:
        points = _parse_points(args.points or osec.get("points", f"{T}:0"), T)
        m_inner = args.m_inner or int(osec.get("m_inner", 10_000))
        mode = args.mode or osec.get("mode", "fd")
        slack = args.slack if args.slack is not None else float(osec.get("slack", 0.02))
        substeps = args.substeps or int(osec.get("substeps", 1))
        flow = FlowConfig(mode=mode, m_inner=m_inner, substeps=substeps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    results = run_oracle_check(cfg, points, flow, slack=slack)
    print("t,x,grid,mean,stderr,samples,pass")
    for r in results:
        xs = " ".join(repr(v) for v in r.x)
        print(f"{r.t!r},{xs},{r.grid_value!r},{r.mean!r},{r.stderr!r},{r.samples},{'pass' if r.passed else 'FAIL'}")
    return EXIT_PASS if all(r.passed for r in results) else EXIT_GATE


def cmd_weights(args):
    r = args.r if args.r is not None else 1
    try:
        w = weights(r)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"r = {r}")
    for i, c in enumerate(w.exact):
        print(f"c_{i} = {c}  ({float(c)!r})")
    moments = w.moments()
    ok = moments[0] == 1 and all(m == 0 for m in moments[1:])
    print("moment conditions: " + ("exact" if ok else "VIOLATED"))
    return EXIT_PASS if ok else EXIT_GATE


def _common(p):
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--problem", help="registered problem name")
    p.add_argument("--h", type=float, help="base mesh size")
    p.add_argument("--tau", type=float, help="time step (coarsest for converge-time)")
    p.add_argument("--R", type=float, help="cutoff radius")
    p.add_argument("--nu", type=float, help="evaluation ball fraction in (0, 1)")
    p.add_argument("--r", type=int, help="Richardson depth")
    p.add_argument("--samples", type=int, help="Monte Carlo paths M")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", help="output directory (default: stdout)")
    p.add_argument("--format", default="csv", choices=list(rep.FORMATS) + ["all"])
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--levels", type=int, help="number of h levels")
    p.add_argument("--tau-levels", dest="tau_levels", type=int)
    p.add_argument("--ref-extra", dest="ref_extra", type=int)
    p.add_argument("--R-ref", dest="R_ref", type=float)
    p.add_argument("--radii", help="comma separated localisation radii")
    p.add_argument("--workers", type=int)
    p.add_argument("--cutoff", choices=["arctan-bump", "smoothstep", "none"])
    p.add_argument("--tau-rule", dest="tau_rule", choices=["fixed", "h4"])
    p.add_argument("--tol", type=float)
    p.add_argument("--timestamps", action="store_true", help="record the generation time in metadata")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser():
    parser = argparse.ArgumentParser(prog="spdefd", description="Finite differences for degenerate parabolic SPDEs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="single run; dump the terminal field as CSV")
    _common(p)
    p.add_argument("--sample", type=int, default=0, help="sample id of the driving path")
    p.set_defaults(func=cmd_solve)

    for name, func, helptext in (
        ("converge-space", cmd_converge_space, "error along the h ladder"),
        ("converge-time", cmd_converge_time, "error along the tau ladder"),
        ("localize", cmd_localize, "error along the cutoff radii"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--slope-min", dest="slope_min", type=float)
        p.add_argument("--slope-max", dest="slope_max", type=float)
        p.add_argument("--decreasing", action="store_const", const=True, default=None,
                       help="require strictly decreasing errors")
        p.set_defaults(func=func)

    p = sub.add_parser("oracle-check", help="grid value against the characteristics estimate")
    _common(p)
    p.add_argument("--points", help="t:x pairs separated by ';' (x alone means t = T)")
    p.add_argument("--m-inner", dest="m_inner", type=int)
    p.add_argument("--mode", choices=["fd", "analytic"])
    p.add_argument("--slack", type=float)
    p.add_argument("--substeps", type=int, help="characteristic steps per grid step")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("weights", help="Richardson weights as exact fractions")
    p.add_argument("--r", type=int)
    p.set_defaults(func=cmd_weights, verbose=False)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpdeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
