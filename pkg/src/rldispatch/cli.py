"""Command-line entry point for dispatch experiments.

Subcommands:

* ``run-eval``: evaluate the configured policies at one penetration
  level and write ``results.csv`` plus ``summary.json``.
* ``sweep``: the full policy-versus-penetration experiment over the
  configured grid.
* ``dp-check``: threshold-structure verification of the bundled
  dynamic-programming fixtures, written as ``dp_report.json``.
* ``solver-bench``: KKT accuracy and status report of the embedded
  cone solver on its bundled instances, written as
  ``solver_bench.json``.
* ``emit-config-template``: print (or write) a fully populated config
  file to edit.

Flag values override config-file values. Every output directory
receives ``config.json``, the fully resolved configuration the run
actually used, so any artifact can be reproduced from its own folder.
Exit codes: 2 for bad flags (argparse), 3 for configuration problems,
4 for data problems, 5 for solver failures. Errors are emitted to
stderr as one JSON object with ``error`` and ``message`` fields. The
``RLD_LOG`` environment variable (debug, info, warning, error) sets
log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
import scipy.sparse as sp

from .data import (RunConfig, SynthSpec, aggregate_hourly, dump_config,
                   load_config, load_series, make_day_instance, pick_days,
                   synth_benchmark, write_json, write_results_csv)
from .dporacle import structure_check_suite
from .errors import ConfigError, DataError, RldError, SolverFailure
from .simulate import build_oracle_problem, oracle_rhs, penetration_sweep
from .solver import (OPTIMAL, ConicProblem, NonNeg, SecondOrder,
                     SolverSettings, kkt_residuals, solve)

_log = logging.getLogger(__name__)

EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_SOLVER = 5

_LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO,
               "warning": logging.WARNING, "error": logging.ERROR}


def _setup_logging() -> None:
    name = os.environ.get("RLD_LOG", "warning").strip().lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rld",
        description="Risk-limiting dispatch experiments under ramp "
                    "constraints.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_data=True):
        p.add_argument("--config", help="JSON config file; flags override")
        p.add_argument("--out", default="rld-out",
                       help="output directory (default: %(default)s)")
        p.add_argument("--seed", type=int, help="override config seed")
        if with_data:
            p.add_argument("--data", default="synthetic",
                           help="'synthetic' or a CSV file path "
                                "(default: %(default)s)")
            p.add_argument("--penetration",
                           help="comma-separated wind levels in percent")
            p.add_argument("--policies",
                           help="comma-separated policy names")
            p.add_argument("--scenarios", type=int,
                           help="Monte Carlo scenarios per day")
            p.add_argument("--days", type=int,
                           help="number of benchmark days")
            p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                           help="evaluation worker processes "
                                "(default: logical cores)")

    add_common(sub.add_parser(
        "run-eval", help="evaluate policies at a single penetration"))
    add_common(sub.add_parser(
        "sweep", help="full penetration sweep over the configured grid"))
    add_common(sub.add_parser(
        "dp-check", help="verify threshold structure on bundled fixtures"),
        with_data=False)
    add_common(sub.add_parser(
        "solver-bench", help="KKT report on bundled solver instances"),
        with_data=False)
    tmpl = sub.add_parser("emit-config-template",
                          help="print a fully populated config file")
    tmpl.add_argument("--out", help="write here instead of stdout")
    return parser


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "penetration", None):
        try:
            updates["penetrations"] = tuple(
                float(tok) for tok in args.penetration.split(",") if tok)
        except ValueError as exc:
            raise ConfigError(f"bad --penetration list: {exc}") from exc
    if getattr(args, "policies", None):
        updates["policies"] = tuple(
            tok.strip() for tok in args.policies.split(",") if tok.strip())
    if getattr(args, "scenarios", None) is not None:
        updates["n_scenarios"] = args.scenarios
    if getattr(args, "days", None) is not None:
        updates["n_days"] = args.days
    if updates:
        merged = config.to_dict()
        merged.update(updates)
        config = RunConfig.from_dict(merged)
    return config


def _load_days(args, config: RunConfig):
    """Day instances plus the scenario mode they should be run in."""
    if args.data == "synthetic":
        rng = np.random.default_rng(config.seed)
        days = synth_benchmark(SynthSpec(n_days=config.n_days), rng)
        return days, "forward"
    series = load_series(args.data)
    instances = [make_day_instance(date, load, wind, p=0.0)
                 for date, load, wind in aggregate_hourly(series)]
    if len(instances) > config.n_days:
        rng = np.random.default_rng(config.seed)
        instances = pick_days(instances, config.n_days, rng)
    _log.info("loaded %d day(s) from %s", len(instances), args.data)
    return instances, "anchored"


def _solver_overrides(config: RunConfig, **defaults):
    if not config.solver and not defaults:
        return None
    merged = dict(defaults)
    merged.update(config.solver)
    try:
        return SolverSettings(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver settings: {exc}") from exc


def _run_sweep_command(args, single_penetration: bool) -> int:
    config = _resolve_config(args)
    if single_penetration:
        merged = config.to_dict()
        merged["penetrations"] = [config.penetrations[0]]
        config = RunConfig.from_dict(merged)
    days, mode = _load_days(args, config)
    socp = _solver_overrides(config)
    rows, summary = penetration_sweep(days, config, socp_settings=socp,
                                      scenario_mode=mode, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    write_results_csv(rows, os.path.join(args.out, "results.csv"))
    write_json(summary, os.path.join(args.out, "summary.json"))
    dump_config(config, os.path.join(args.out, "config.json"))
    print(f"wrote {len(rows)} rows to {args.out}/results.csv")
    return 0


def cmd_run_eval(args) -> int:
    return _run_sweep_command(args, single_penetration=True)


def cmd_sweep(args) -> int:
    return _run_sweep_command(args, single_penetration=False)


def cmd_dp_check(args) -> int:
    config = _resolve_config(args)
    report = structure_check_suite(base_seed=config.seed)
    os.makedirs(args.out, exist_ok=True)
    write_json(report, os.path.join(args.out, "dp_report.json"))
    dump_config(config, os.path.join(args.out, "config.json"))
    status = "ok" if report["ok"] else "VIOLATIONS FOUND"
    print(f"dp-check: {status} over {report['cells_checked']} cells "
          f"({args.out}/dp_report.json)")
    return 0 if report["ok"] else 1


def _box_lp(rng, n):
    """Random bounded LP over a box with a random extra facet."""
    c = rng.uniform(-2.0, 2.0, n)
    lo = rng.uniform(-3.0, 0.0, n)
    hi = rng.uniform(0.5, 3.0, n)
    a = rng.uniform(0.2, 1.0, n)
    cap = float(a @ ((lo + hi) / 2) + rng.uniform(0.5, 2.0))
    A = sp.csr_matrix(np.vstack([np.eye(n), -np.eye(n), a]))
    b = np.concatenate([hi, -lo, [cap]])
    return ConicProblem(c=c, A=A, b=b, cones=(NonNeg(2 * n + 1),))


def _ball_socp(rng, n):
    """Random LP objective over a box intersected with a ball."""
    c = rng.uniform(-2.0, 2.0, n)
    center = rng.uniform(-0.5, 0.5, n)
    radius = float(rng.uniform(1.0, 2.0))
    box = 2.5 * np.ones(n)
    A = sp.csr_matrix(np.vstack([np.eye(n), -np.eye(n),
                                 np.zeros((1, n)), -np.eye(n)]))
    b = np.concatenate([box, box, [radius], -center])
    return ConicProblem(c=c, A=A, b=b,
                        cones=(NonNeg(2 * n), SecondOrder(n + 1)))


def bundled_solver_instances(seed: int = 0):
    """Deterministic benchmark problems shipped with the solver.

    Mixes the dispatch oracle spot instance, seeded bounded LPs and
    ball-constrained SOCPs, and one infeasible plus one unbounded
    certificate case.
    """
    from .params import DispatchParams
    instances = []
    spot = DispatchParams(T=2, r_up=5.0, r_down=5.0, c=1.0, q=100.0)
    problem = build_oracle_problem(2, spot)
    instances.append(("oracle-spot-lp", ConicProblem(
        c=problem.c, A=problem.A,
        b=oracle_rhs(np.array([[10.0, 20.0]]), spot)[:, 0],
        cones=problem.cones)))
    for k in range(4):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(1, k)))
        instances.append((f"box-lp-{k}", _box_lp(rng, 2 + k)))
    for k in range(4):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(2, k)))
        instances.append((f"ball-socp-{k}", _ball_socp(rng, 2 + k)))
    instances.append(("infeasible-lp", ConicProblem(
        c=np.zeros(1), A=sp.csr_matrix(np.array([[1.0], [-1.0]])),
        b=np.array([1.0, -2.0]), cones=(NonNeg(2),))))
    instances.append(("unbounded-lp", ConicProblem(
        c=np.array([-1.0]), A=sp.csr_matrix(np.array([[-1.0]])),
        b=np.array([0.0]), cones=(NonNeg(1),))))
    return instances


def run_solver_bench(seed: int = 0, settings: SolverSettings = None) -> dict:
    """Solve every bundled instance and collect accuracy diagnostics."""
    settings = settings or SolverSettings()
    entries = []
    worst = 0.0
    for name, problem in bundled_solver_instances(seed):
        solution = solve(problem, settings)
        entry = {"name": name, "n": problem.n, "m": problem.m,
                 "status": solution.status,
                 "iterations": solution.iterations}
        if solution.status == OPTIMAL:
            res = kkt_residuals(problem, solution)
            entry["objective"] = solution.objective
            entry["kkt"] = {"primal": res.primal, "dual": res.dual,
                            "gap": res.gap}
            worst = max(worst, res.worst)
        entries.append(entry)
    expected = {"infeasible-lp": "infeasible", "unbounded-lp": "unbounded"}
    statuses_ok = all(
        e["status"] == expected.get(e["name"], OPTIMAL) for e in entries)
    return {"seed": seed, "tol": settings.tol, "instances": entries,
            "max_kkt_residual": worst, "statuses_ok": statuses_ok,
            "ok": statuses_ok and worst <= 10.0 * settings.tol}


def cmd_solver_bench(args) -> int:
    config = _resolve_config(args)
    report = run_solver_bench(seed=config.seed,
                              settings=_solver_overrides(config))
    os.makedirs(args.out, exist_ok=True)
    write_json(report, os.path.join(args.out, "solver_bench.json"))
    dump_config(config, os.path.join(args.out, "config.json"))
    print(f"solver-bench: max KKT residual {report['max_kkt_residual']:.3e} "
          f"({args.out}/solver_bench.json)")
    return 0 if report["ok"] else 1


def cmd_emit_config_template(args) -> int:
    config = RunConfig()
    if args.out:
        dump_config(config, args.out)
        print(f"wrote {args.out}")
    else:
        json.dump(config.to_dict(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


_COMMANDS = {"run-eval": cmd_run_eval, "sweep": cmd_sweep,
             "dp-check": cmd_dp_check, "solver-bench": cmd_solver_bench,
             "emit-config-template": cmd_emit_config_template}


def run(argv=None) -> int:
    """Parse ``argv`` and execute one command; returns the exit code."""
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except RldError as exc:
        if isinstance(exc, SolverFailure):
            code, category = EXIT_SOLVER, "solver"
        elif isinstance(exc, DataError):
            code, category = EXIT_DATA, "data"
        else:
            code, category = EXIT_CONFIG, "config"
        json.dump({"error": category, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
