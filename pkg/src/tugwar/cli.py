"""Command-line entry point: ``tugwar {solve,simulate,verify,converge,hypothesis}``.

Exit codes: 0 ok, 1 usage, 2 validation/schema, 3 no convergence,
4 verification threshold exceeded (or strict hypothesis failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import expr as ex
from .dpp import NoConvergence, ValueField, solve_dpp
from .game import AllTruncated, Strategy, estimate_value, simulate
from .geometry import GeometryError, NodeClass, check_domain_hypothesis
from .problem import SchemaError, load_problem, run_convergence
from .verify import comparison_sweep, residual_report

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_NOCONV, EXIT_THRESHOLD = 0, 1, 2, 3, 4
FAIL_ON_KEYS = {
    "interior": ("residuals", "interior_linf_residual"),
    "neumann": ("residuals", "neumann_linf_residual"),
    "dirichlet": ("residuals", "dirichlet_linf_error"),
    "failures": ("comparison", "failures"),
}

log = logging.getLogger("tugwar")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def _point(text: str) -> tuple:
    try:
        return tuple(float(c) for c in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated coordinates, got {text!r}")


def _threshold(text: str) -> tuple:
    key, sep, val = text.partition("=")
    if not sep or key not in FAIL_ON_KEYS:
        raise argparse.ArgumentTypeError(f"expected one of {sorted(FAIL_ON_KEYS)}=<number>, got {text!r}")
    try:
        return key, float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold for {key} is not a number: {val!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tugwar", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the DPP; write field.csv and solve.json")
    p.add_argument("problem")
    p.add_argument("-o", "--out", default=".")

    p = sub.add_parser("simulate", help="Monte Carlo estimate of the game value at a point")
    p.add_argument("problem")
    p.add_argument("--at", type=_point, required=True, help="start coordinates, e.g. 0.5,0.5")
    p.add_argument("-n", "--episodes", type=int, default=10_000)
    p.add_argument("--step-cap", type=int, default=10_000_000)
    p.add_argument("--seed", type=int, default=None, help="defaults to the problem's seed")
    p.add_argument("--player-i", default="greedy-max", choices=["greedy-max", "greedy-min", "uniform-random"])
    p.add_argument("--player-ii", default="greedy-min", choices=["greedy-max", "greedy-min", "uniform-random"])
    p.add_argument("--dump-episode", metavar="CSV", help="also write the first episode as CSV")
    p.add_argument("-o", "--out", default=".")

    p = sub.add_parser("verify", help="residual report and comparison sweep")
    p.add_argument("problem")
    p.add_argument("--field", help="verify this field CSV instead of solving")
    p.add_argument("--delta", type=float, default=None, help="finite-difference step (default h)")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fail-on", type=_threshold, action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-o", "--out", default=".")

    p = sub.add_parser("converge", help="epsilon -> 0 convergence study")
    p.add_argument("problem")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--exact", default=None, help="exact solution expression")
    p.add_argument("--timings", action="store_true", help="include wall times (output no longer reproducible)")
    p.add_argument("-o", "--out", default=".")

    p = sub.add_parser("hypothesis", help="check the Neumann-boundary geometric hypothesis")
    p.add_argument("problem")
    p.add_argument("--mode", choices=["strict", "flat-ok"], default="strict")
    return ap


def _strategy(kind: str, field: ValueField) -> Strategy:
    return Strategy(kind, field=field) if kind.startswith("greedy") else Strategy(kind)


def _cmd_solve(args, prob) -> int:
    g = prob.grid()
    cfg = prob.solver_config()
    u = solve_dpp(g, prob.payoff_expr, cfg)
    out = Path(args.out)
    _write(out, "field.csv", u.to_csv())
    doc = {
        "epsilon": u.epsilon,
        "h": g.h,
        "iterations": u.iterations,
        "final_residual": u.final_residual,
        "tol": cfg.tol,
        "sweep": cfg.sweep,
        "init": cfg.init,
        "nodes": {
            "interior": int(g.ids(NodeClass.INTERIOR).size),
            "dirichlet": int(g.dirichlet.size),
            "neumann": int(g.neumann.size),
        },
    }
    _write(out, "solve.json", _dump(doc))
    return EXIT_OK


def _cmd_simulate(args, prob) -> int:
    g = prob.grid()
    u = solve_dpp(g, prob.payoff_expr, prob.solver_config())
    x0 = g.node_at(args.at, tol=1e-6 * g.h)  # --at must name a node, not snap to one
    seed = prob.seed if args.seed is None else args.seed
    sI, sII = _strategy(args.player_i, u), _strategy(args.player_ii, u)
    est = estimate_value(g, prob.payoff_expr, x0, sI, sII, prob.epsilon, args.step_cap, args.episodes, seed)
    doc = est.to_dict()
    doc["dpp_value"] = float(u.values[x0])
    out = Path(args.out)
    _write(out, "estimate.json", _dump(doc))
    if args.dump_episode:
        ep = simulate(g, prob.payoff_expr, x0, sI, sII, prob.epsilon, args.step_cap, seed)
        Path(args.dump_episode).parent.mkdir(parents=True, exist_ok=True)
        ep.to_csv(g, u, dest=args.dump_episode)
    return EXIT_OK


def _cmd_verify(args, prob) -> int:
    g = prob.grid()
    if args.field:
        u = ValueField.from_csv(g, args.field, prob.epsilon)
    else:
        u = solve_dpp(g, prob.payoff_expr, prob.solver_config())
    seed = prob.seed if args.seed is None else args.seed
    res = residual_report(u, prob.payoff_expr, args.delta)
    sweep = comparison_sweep(u, args.trials, seed)
    doc = {"residuals": res.to_dict(), "comparison": sweep.to_dict()}
    exceeded = []
    for key, limit in args.fail_on:
        section, name = FAIL_ON_KEYS[key]
        value = doc[section][name]
        value = len(value) if isinstance(value, list) else value
        if value > limit:
            exceeded.append({"key": key, "value": value, "limit": limit})
    doc["exceeded"] = exceeded
    _write(Path(args.out), "verify.json", _dump(doc))
    for e in exceeded:
        print(f"threshold exceeded: {e['key']} = {e['value']:.6g} > {e['limit']:.6g}", file=sys.stderr)
    return EXIT_THRESHOLD if exceeded else EXIT_OK


def _cmd_converge(args, prob) -> int:
    rep = run_convergence(prob, args.levels, args.exact)
    _write(Path(args.out), "converge.json", _dump(rep.to_dict(timings=args.timings)))
    return EXIT_NOCONV if rep.failed_level is not None else EXIT_OK


def _cmd_hypothesis(args, prob) -> int:
    g = prob.grid()
    rep = check_domain_hypothesis(g, args.mode)
    sys.stdout.write(_dump(rep.to_dict()))
    if args.mode == "strict" and not rep.holds:
        return EXIT_THRESHOLD
    return EXIT_OK


COMMANDS = {
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "converge": _cmd_converge,
    "hypothesis": _cmd_hypothesis,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"tugwar: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        prob = load_problem(args.problem)
        return COMMANDS[args.command](args, prob)
    except FileNotFoundError as err:
        print(f"tugwar: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ex.ParseError, GeometryError, ValueError) as err:
        where = getattr(err, "field", None)
        prefix = f"{where}: " if where and not isinstance(err, SchemaError) else ""
        print(f"tugwar: invalid input: {prefix}{err}", file=sys.stderr)
        return EXIT_SCHEMA
    except NoConvergence as err:
        print(f"tugwar: {err}", file=sys.stderr)
        return EXIT_NOCONV
    except AllTruncated as err:
        print(f"tugwar: {err}", file=sys.stderr)
        return EXIT_THRESHOLD


if __name__ == "__main__":
    sys.exit(main())
