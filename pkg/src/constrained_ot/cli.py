"""Command-line interface.

Commands::

    solve        run a scaling algorithm on an instance file
    simulate-ev  generate and solve seeded EV charging instances
    check        certify a plan file against an instance file
    oracle       brute-force minimizer for tiny instances
    feasibility  decide whether the exact marginals are attainable

Exit status: 0 success, 1 invalid input or failed check, 2 numerical failure,
3 iteration budget exhausted (including suspected infeasibility). Errors are
reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import InstanceError, ProblemInstance, check_feasibility_exact, validate_instance
from .divergence import objective
from .fileio import plan_to_dict, read_instance, read_plan, report_to_dict, write_json, write_trace
from .scenarios import EvScenarioConfig, generate_ev_instance
from .solvers import SolverConfig, SolveReport, Termination, solve
from .verify import check_kkt, oracle_minimize

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
EXIT_BUDGET = 3

_TERMINATION_EXIT = {
    Termination.CONVERGED: EXIT_OK,
    Termination.NUMERICAL_FAILURE: EXIT_NUMERICAL,
    Termination.MAX_ITERATIONS: EXIT_BUDGET,
    Termination.SUSPECTED_INFEASIBLE: EXIT_BUDGET,
}
_TERMINATION_ERROR = {
    Termination.NUMERICAL_FAILURE: "NumericalFailure",
    Termination.MAX_ITERATIONS: "MaxIterations",
    Termination.SUSPECTED_INFEASIBLE: "SuspectedInfeasible",
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_INVALID, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _positive_float(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return val


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol-scaling", type=_positive_float, default=1e-9)
    p.add_argument("--tol-delta", type=_positive_float, default=1e-12)
    p.add_argument("--max-iter", type=_positive_int, default=100_000)
    p.add_argument("--trace", type=Path, help="write the convergence trace as CSV")
    p.add_argument("--format", choices=("dense", "sparse"), default="sparse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="constrained-ot", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve an instance file")
    p.add_argument("--instance", type=Path, required=True)
    p.add_argument("--out", type=Path, help="plan/result JSON (stdout summary only if omitted)")
    p.add_argument("--algorithm", choices=("alg1", "alg2", "sk", "chizat"), default="alg1")
    p.add_argument("--gamma", type=_positive_float, help="override the instance's gamma")
    p.add_argument("--gamma0", type=_positive_float, help="override the instance's gamma0")
    p.add_argument("--gamma1", type=_positive_float, help="row relaxation weight (chizat)")
    p.add_argument("--gamma2", type=_positive_float, help="column relaxation weight (chizat)")
    _add_solver_flags(p)

    p = sub.add_parser("simulate-ev", help="solve seeded EV charging instances")
    p.add_argument("--m", type=_positive_int, default=10_000)
    p.add_argument("--n", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=_positive_int, default=1)
    p.add_argument("--gamma0", type=_positive_float, default=1.99)
    p.add_argument("--gamma", type=_positive_float, default=1.005)
    p.add_argument("--out", type=Path)
    _add_solver_flags(p)

    p = sub.add_parser("check", help="check a plan's optimality conditions")
    p.add_argument("--instance", type=Path, required=True)
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--tol", type=_positive_float, default=1e-8)

    p = sub.add_parser("oracle", help="brute-force minimizer for tiny instances")
    p.add_argument("--instance", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=("dense", "sparse"), default="sparse")

    p = sub.add_parser("feasibility", help="test whether exact marginals are attainable")
    p.add_argument("--instance", type=Path, required=True)
    return parser


def _load(path: Path, gamma0=None, gamma=None) -> ProblemInstance:
    try:
        inst = read_instance(path)
    except OSError as exc:
        raise CliError("FileError", str(exc)) from exc
    overrides = {k: v for k, v in (("gamma0", gamma0), ("gamma", gamma)) if v is not None}
    if overrides:
        inst = inst.replace(**overrides)
    result = validate_instance(inst)
    if not result.ok:
        raise CliError(
            type(result.errors[0]).__name__, str(result.errors[0]),
            errors=[{"error": type(e).__name__, "message": str(e)} for e in result.errors],
        )
    inst.kernel  # surfaces under/overflow as an InstanceError
    return inst


def _finish(report: SolveReport, out: Path | None, trace: Path | None, fmt: str) -> int:
    if out is not None:
        write_json(report_to_dict(report, fmt), out)
    if trace is not None:
        write_trace(report.trace, trace)
    print(json.dumps(report.summary()))
    code = _TERMINATION_EXIT[report.termination]
    if code != EXIT_OK:
        _emit_error(
            _TERMINATION_ERROR[report.termination],
            f"{report.algorithm} stopped after {report.iterations} iterations without converging",
            iterations=report.iterations,
        )
    return code


def _solver_config(args, algorithm: str) -> SolverConfig:
    return SolverConfig(
        algorithm=algorithm,
        tol_scaling=args.tol_scaling,
        tol_delta=args.tol_delta,
        max_iter=args.max_iter,
        gamma1=getattr(args, "gamma1", None),
        gamma2=getattr(args, "gamma2", None),
    )


def cmd_solve(args) -> int:
    if args.algorithm == "chizat" and args.gamma1 is None:
        raise CliError("InvalidArguments", "--algorithm chizat requires --gamma1")
    inst = _load(args.instance, args.gamma0, args.gamma)
    report = solve(inst, _solver_config(args, args.algorithm))
    return _finish(report, args.out, args.trace, args.format)


def _per_run(path: Path | None, seed: int, runs: int) -> Path | None:
    if path is None or runs == 1:
        return path
    return path.with_name(f"{path.stem}_seed{seed}{path.suffix}")


def cmd_simulate_ev(args) -> int:
    cfg = _solver_config(args, "alg1")
    worst = EXIT_OK
    for seed in range(args.seed, args.seed + args.runs):
        try:
            ev = EvScenarioConfig(m=args.m, n=args.n, seed=seed, gamma0=args.gamma0, gamma=args.gamma)
        except ValueError as exc:
            raise CliError("InvalidArguments", str(exc)) from exc
        inst = generate_ev_instance(ev)
        report = solve(inst, cfg)
        code = _finish(
            report, _per_run(args.out, seed, args.runs), _per_run(args.trace, seed, args.runs), args.format
        )
        worst = max(worst, code)
    return worst


def cmd_check(args) -> int:
    inst = _load(args.instance)
    try:
        mat, v_star = read_plan(args.plan)
    except OSError as exc:
        raise CliError("FileError", str(exc)) from exc
    report = check_kkt(inst, mat, v_star)
    failures = report.failures(args.tol)
    for key, val in report.as_dict().items():
        print(f"{key}: {json.dumps(val)}")
    if failures:
        _emit_error("ResidualViolation", "; ".join(failures), failures=failures)
        return EXIT_INVALID
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = _load(args.instance)
    plan = oracle_minimize(inst)
    doc = plan_to_dict(plan, args.format)
    doc["v_star"] = plan.col_sums().tolist()
    doc["summary"] = {"objective_total": objective(inst, plan).total}
    if args.out is not None:
        write_json(doc, args.out)
    print(json.dumps(doc["summary"]))
    return EXIT_OK


def cmd_feasibility(args) -> int:
    inst = _load(args.instance)
    print(json.dumps({"feasible": check_feasibility_exact(inst)}))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate-ev": cmd_simulate_ev,
    "check": cmd_check,
    "oracle": cmd_oracle,
    "feasibility": cmd_feasibility,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        _emit_error(exc.kind, str(exc), **exc.extra)
        return exc.code
    except InstanceError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_INVALID
    except FloatingPointError as exc:
        _emit_error("NumericalFailure", str(exc))
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
