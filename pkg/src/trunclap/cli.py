"""Command-line entry point: ``trunclap {solve,sweep,verify,diagram,selftest}``.

Exit codes: 0 success, 1 a check failed or a solve did not converge,
2 bad configuration or usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .analysis import EquationKind, max_residual
from .energy import ConfigError
from .harness import (
    diagram_commutation,
    export,
    load_config,
    run_sweep,
    with_overrides,
)
from .mesh import MeshError, read_field, write_field
from .solver import make_params, solve_dirichlet


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="trunclap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one Dirichlet problem with p-continuation")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="field dump path")
    s.add_argument("--p", type=float, nargs="+", help="override sweep.p_list")
    s.add_argument("--sigma", type=float, help="override the first sweep.sigma_list entry")
    s.add_argument("--variant", choices=("plain", "jensen_upper", "jensen_lower"))
    s.add_argument("--report", help="write the final solve report as JSON")

    w = sub.add_parser("sweep", help="run a (p, sigma) sweep")
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True, help="CSV table path")
    w.add_argument("--json", help="also write the full table as JSON")
    w.add_argument("--jobs", type=int, default=1)

    v = sub.add_parser("verify", help="finite-difference residual of a stored field")
    v.add_argument("--field", required=True)
    v.add_argument("--equation", required=True, choices=[k.value for k in EquationKind])
    v.add_argument("--tol", type=float, required=True)
    v.add_argument("--p", type=float, default=8.0)
    v.add_argument("--sigma", type=float, default=0.0)
    v.add_argument("--variant", default=None, help="defaults from the equation")
    v.add_argument("--layers", type=int, default=0, help="extra boundary node rings to skip")

    d = sub.add_parser("diagram", help="sweep then test the limit diagram")
    d.add_argument("--config", required=True)
    d.add_argument("--tol", type=float)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--out", help="write the report as JSON")

    sub.add_parser("selftest", help="run the closed-form smoke checks")
    return ap


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, p_list=tuple(args.p) if args.p else None)
    sigma = cfg.sigma_list[0] if args.sigma is None else args.sigma
    variant = args.variant or cfg.variants[0]
    mesh = cfg.mesh()
    f = cfg.boundary(mesh)
    start = None
    rep = None
    for p in cfg.p_list:
        rep = solve_dirichlet(mesh, f, make_params(p, sigma, variant), cfg.solver, initial=start)
        if cfg.solver.continuation:
            start = rep.solution
    write_field(args.out, rep.solution)
    summary = {
        "p": rep.params.p,
        "sigma": sigma,
        "variant": variant,
        "energy": rep.energy,
        "residual": rep.optimality_residual,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "dead_core_fraction": rep.dead_core_fraction,
    }
    if args.report:
        export(summary, args.report, "json")
    print(json.dumps(summary))
    return 0 if rep.converged else 1


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    table = run_sweep(cfg, jobs=args.jobs)
    export(table, args.out, "csv")
    if args.json:
        export(table, args.json, "json")
    bad = [k for k, c in table.cells.items() if not c.converged]
    for k in bad:
        print(f"not converged: p={k[0]} sigma={k[1]} {k[2]}", file=sys.stderr)
    return 0 if not bad else 1


_DEFAULT_VARIANT = {
    "jensen_upper_p": "jensen_upper",
    "jensen_upper_limit": "jensen_upper",
    "jensen_lower_p": "jensen_lower",
    "jensen_lower_limit": "jensen_lower",
}


def _cmd_verify(args) -> int:
    u = read_field(args.field)
    variant = args.variant or _DEFAULT_VARIANT.get(args.equation, "plain")
    params = make_params(args.p, args.sigma, variant)
    r = max_residual(u, args.equation, params, interior_layers=args.layers)
    print(json.dumps({"equation": args.equation, "max_residual": r, "tol": args.tol, "pass": r <= args.tol}))
    return 0 if r <= args.tol else 1


def _cmd_diagram(args) -> int:
    cfg = load_config(args.config)
    table = run_sweep(cfg, jobs=args.jobs)
    rep = diagram_commutation(table, tol=args.tol)
    if args.out:
        export(rep, args.out, "json")
    print(json.dumps(rep.to_dict()))
    return 0 if rep.passed else 1


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


COMMANDS = {
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "diagram": _cmd_diagram,
    "selftest": _cmd_selftest,
}


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except ConfigError as exc:
        print(f"trunclap: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MeshError, OSError) as exc:
        print(f"trunclap: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
