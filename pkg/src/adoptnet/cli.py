"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (bad flags, scenario violations),
2 solver nonconvergence, 3 I/O failure.  Data goes to ``--out`` (or stdout),
diagnostics to stderr.  Relative ``--out`` paths are resolved against
``$ADOPTNET_OUTPUT_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats, stability
from .control import (
    BudgetConstraint,
    CostWeights,
    MpcConfig,
    run_mpc,
    solve_constant_policy,
)
from .errors import AdoptNetError, NonConvergenceError
from .experiments import (
    config_from_dict,
    config_to_dict,
    control_cost,
    effectiveness,
    export_report,
    generate_scenario,
    run_comparison,
    write_plot_data,
)
from .model import validate_scenario, simulate

log = logging.getLogger("adoptnet")

OUTPUT_DIR_ENV = "ADOPTNET_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _scenario_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="scenario JSON file")
    src.add_argument("--seed", type=int, help="generate a random scenario from this seed")
    p.add_argument("-n", type=int, default=10, help="community count for --seed")


def _out_args(p, formats_=("csv", "json"), default="csv"):
    p.add_argument("--out", type=Path, default=None, help="output file (stdout when omitted)")
    p.add_argument("--format", choices=formats_, default=None,
                   help=f"output format (inferred from --out suffix, else {default})")


def _control_args(p, steps_default=100):
    p.add_argument("--steps", type=int, default=steps_default, help="closed-loop steps")
    p.add_argument("--budget", type=float, default=1.0, help="per-step budget C on sum(u)")
    p.add_argument("--horizon", type=int, default=10, help="MPC prediction horizon N")
    p.add_argument("--qa", type=float, default=1.0, help="adoption reward weight Q^A")
    p.add_argument("--qd", type=float, default=1.0, help="dissatisfaction weight Q^D")
    p.add_argument("--effort", type=float, default=0.1, help="effort weight L")
    p.add_argument("--terminal-weight", type=float, default=10.0,
                   help="weight of the soft terminal constraint")
    p.add_argument("--eta", type=float, default=None,
                   help="opinion contraction factor for the stability certificate "
                        "(max lambda when omitted)")
    p.add_argument("--max-iter", type=int, default=200, help="MPC solver iteration cap")
    p.add_argument("--gauss-newton", action="store_true",
                   help="run the Gauss-Newton refinement after projected gradient")
    p.add_argument("--config", type=Path, default=None,
                   help="MPC config JSON; explicit flags override it")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="adoptnet", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a seeded random scenario", formatter_class=fmt)
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("-n", type=int, default=10, help="community count")
    p.add_argument("--out", type=Path, default=None, help="output file (stdout when omitted)")

    p = sub.add_parser("simulate", help="simulate the uncontrolled dynamics", formatter_class=fmt)
    _scenario_args(p)
    p.add_argument("--steps", type=int, default=100, help="number of steps")
    _out_args(p)

    p = sub.add_parser("stability", help="equilibria and stability certificates", formatter_class=fmt)
    _scenario_args(p)
    p.add_argument("--eta", type=float, default=None,
                   help="opinion contraction factor (max lambda when omitted)")
    p.add_argument("--seed-adopters", type=float, default=0.01,
                   help="uniform adopter seed for the diffused-equilibrium search")
    p.add_argument("--out", type=Path, default=None, help="output JSON (stdout when omitted)")

    p = sub.add_parser("control", help="constant policy plus closed-loop MPC", formatter_class=fmt)
    _scenario_args(p)
    _control_args(p)
    _out_args(p)

    p = sub.add_parser("compare", help="uncontrolled vs constant policy vs MPC", formatter_class=fmt)
    _scenario_args(p)
    _control_args(p)
    p.add_argument("--out", type=Path, default=None, help="report JSON (stdout when omitted)")
    p.add_argument("--plot-dir", type=Path, default=None,
                   help="directory for aggregate, per-community and cost/effectiveness CSVs")
    return parser


def _resolve(path: Path | None) -> Path | None:
    if path is None or path.is_absolute():
        return path
    base = os.environ.get(OUTPUT_DIR_ENV)
    return Path(base) / path if base else path


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        formats.write_text(out, text)
        log.info("wrote %s", out)


def _fmt(args, default="csv") -> str:
    if args.format:
        return args.format
    if args.out is not None and args.out.suffix.lower() in (".csv", ".json"):
        return args.out.suffix.lower()[1:]
    return default


def _load(args):
    if args.scenario is not None:
        sc = formats.load_scenario(args.scenario)
    else:
        if args.n < 1:
            raise UsageError("-n must be >= 1")
        sc = generate_scenario(args.seed, args.n)
    report = validate_scenario(sc)
    if not report.ok:
        for v in report.violations:
            print(f"invalid scenario: {v}", file=sys.stderr)
        raise _Invalid()
    return sc


class _Invalid(Exception):
    pass


def _mpc_config(args, sc) -> MpcConfig:
    given = args._given
    base = config_from_dict(formats.read_json(args.config)) if args.config else MpcConfig()
    base_w = base.weights or CostWeights.uniform(sc.n)
    pick = lambda dest, cur: getattr(args, dest) if (dest in given or args.config is None) else cur
    weights = CostWeights(
        np.full(sc.n, args.qa) if ("qa" in given or base.weights is None) else base_w.q_a,
        np.full(sc.n, args.qd) if ("qd" in given or base.weights is None) else base_w.q_d,
        np.full(sc.n, args.effort) if ("effort" in given or base.weights is None) else base_w.l,
        pick("terminal_weight", base_w.terminal_weight))
    budget_c = pick("budget", base.budget.c if base.budget else args.budget)
    solver = replace(base.solver, max_iter=pick("max_iter", base.solver.max_iter),
                     gauss_newton=bool(args.gauss_newton or base.solver.gauss_newton))
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    return MpcConfig(horizon=pick("horizon", base.horizon), weights=weights,
                     budget=BudgetConstraint(budget_c), solver=solver, target=base.target)


def _explicit_dests(argv) -> set:
    """Dests given on the command line: re-parse with every default suppressed."""
    parser = build_parser()
    for sp in parser._subparsers._group_actions[0].choices.values():
        for a in sp._actions:
            a.default = argparse.SUPPRESS
    return set(vars(parser.parse_args(argv)))


def _cmd_generate(args):
    if args.n < 1:
        raise UsageError("-n must be >= 1")
    sc = generate_scenario(args.seed, args.n)
    _emit(formats.dumps(formats.scenario_to_dict(sc)), _resolve(args.out))


def _cmd_simulate(args):
    sc = _load(args)
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    traj = simulate(sc, args.steps)
    out = _resolve(args.out)
    fmt = _fmt(args)
    if out is None:
        text = formats.trajectory_csv(traj) if fmt == "csv" else \
            formats.dumps(formats.trajectory_to_dict(traj))
        _emit(text, None)
    else:
        export_report(traj, out, fmt)


def _cmd_stability(args):
    sc = _load(args)
    res = stability.analyze(sc, eta=args.eta, seed=args.seed_adopters)
    doc = {k: v.to_dict() for k, v in res.items()}
    doc["eta"] = stability.default_eta(sc) if args.eta is None else args.eta
    _emit(formats.dumps(doc), _resolve(args.out))


def _cmd_control(args):
    sc = _load(args)
    cfg = _mpc_config(args, sc).resolve(sc)
    ccp = solve_constant_policy(sc, cfg.weights, cfg.budget, args.eta)
    log.info("constant policy: %s, objective %.6g", ccp.status, ccp.objective)
    if cfg.target is None:
        cfg = replace(cfg, target=ccp.report.point)
    traj = run_mpc(sc, cfg, args.steps)
    out = _resolve(args.out)
    fmt = _fmt(args)
    if fmt == "csv":
        _emit(formats.trajectory_csv(traj), out)
    else:
        doc = {
            "constant_policy": {"u": ccp.u.tolist(), "objective": ccp.objective,
                                "certified": ccp.certified, "status": ccp.status,
                                "equilibrium": ccp.report.to_dict()},
            "config": config_to_dict(cfg),
            "mpc": {"effectiveness": effectiveness(traj), "cost": control_cost(traj),
                    "trajectory": formats.trajectory_to_dict(traj)},
        }
        _emit(formats.dumps(doc), out)


def _cmd_compare(args):
    sc = _load(args)
    cfg = _mpc_config(args, sc)
    seed = args.seed if args.seed is not None else 0
    report = run_comparison(seed, sc.n, args.steps, cfg, eta=args.eta, scenario=sc)
    _emit(formats.dumps(report.to_dict()), _resolve(args.out))
    if args.plot_dir is not None:
        write_plot_data(report, _resolve(args.plot_dir))
    if report.effectiveness_mpc < report.effectiveness_ccp or report.cost_mpc > report.cost_ccp:
        log.warning("MPC does not dominate the constant policy on this run")


COMMANDS = {"generate": _cmd_generate, "simulate": _cmd_simulate, "stability": _cmd_stability,
            "control": _cmd_control, "compare": _cmd_compare}


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    args._given = _explicit_dests(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except _Invalid:
        return EXIT_INVALID
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AdoptNetError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
