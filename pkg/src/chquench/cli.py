"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (config, flags), 2 solver failure or
a failed numerical check.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import RunConfig, load_config
from .control import ReducedProblem, projected_gradient_descent
from .errors import ConfigError, DomainError, SolverError
from .io import (
    RunDirectory,
    export_adjoint,
    export_boundary,
    export_decay,
    export_gradient_check,
    export_quench,
    export_timeseries,
    resolve_run_dir,
)
from .oracles import compare_quench_to_obstacle, fd_gradient, obstacle_trajectory
from .quench import complementarity_report, run_quench
from .state import solve_state

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

log = logging.getLogger("chquench")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _run_dir(cfg: RunConfig, args, kind) -> RunDirectory:
    return RunDirectory(resolve_run_dir(cfg.output, args.out), kind)


def cmd_validate(cfg: RunConfig, args) -> int:
    m = cfg.model
    print(f"config ok: {m.grid.dim}D grid with {m.grid.n_nodes} nodes, "
          f"{m.n_steps} steps to T={m.T:g}, alpha={cfg.alpha:g}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    traj = solve_state(cfg.model, cfg.u_initial, cfg.alpha, cfg.newton)
    run = _run_dir(cfg, args, "simulate")
    export_timeseries(run, traj, cfg.u_initial)
    export_boundary(run, traj, cfg.u_initial)
    metrics = {"mass_error_max": float(traj.mass_error.max()),
               "min_margin": float(traj.margins.min())}
    run.write_manifest(cfg.sha256, metrics)
    print(f"mass error {metrics['mass_error_max']:.3e}, "
          f"min barrier margin {metrics['min_margin']:.6f}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, args) -> int:
    problem = ReducedProblem(cfg.model, cfg.targets, cfg.weights, cfg.alpha,
                             cfg.admissible, newton=cfg.newton)
    res = projected_gradient_descent(problem, cfg.u_initial, tol=cfg.solver["opt_tol"],
                                     max_iter=int(cfg.solver["opt_max_iter"]))
    run = _run_dir(cfg, args, "optimize")
    export_timeseries(run, res.traj, res.u)
    export_adjoint(run, res.adjoint)
    export_boundary(run, res.traj, res.u, res.adjoint.q_gamma)
    summary = res.summary()
    summary["M0_active"] = bool(res.dt_u_norm >= cfg.admissible.m0_bound)
    run.write_json("result.json", {"alpha": cfg.alpha, **summary, "history": res.history,
                                   "u": res.u})
    failures = [] if res.converged else [res.message]
    run.write_manifest(cfg.sha256, summary, failures)
    print(f"cost {res.cost:.12g} after {res.iterations} iterations, "
          f"stationarity {res.stationarity:.3e}, VI residual {res.vi_residual:.3e}, "
          f"fixed-point gap {res.fixed_point_gap:.3e}")
    return EXIT_OK if res.converged else EXIT_FAILED


def cmd_quench(cfg: RunConfig, args) -> int:
    report = run_quench(cfg.model, cfg.targets, cfg.weights, cfg.admissible, cfg.schedule,
                        u0=cfg.u_initial, newton=cfg.newton)
    anchored = None
    if cfg.adapted and report.completed:
        anchored = run_quench(cfg.model, cfg.targets, cfg.weights, cfg.admissible,
                              cfg.schedule, anchor=report.final.u, u0=cfg.u_initial,
                              newton=cfg.newton)
    final_report = anchored or report
    comp = complementarity_report(final_report, seed=cfg.seed)
    run = _run_dir(cfg, args, "quench")
    export_quench(run, final_report, comp)
    failures = [f"alpha={s.alpha:g}: {s.error}" for s in final_report.stages if not s.ok]
    if final_report.completed:
        st = final_report.final
        export_timeseries(run, st.result.traj, st.u)
        export_adjoint(run, st.result.adjoint)
        export_boundary(run, st.result.traj, st.u, st.result.adjoint.q_gamma)
    result = {"complementarity": comp, "aborted": final_report.aborted,
              "stages": [s.row() for s in final_report.stages]}
    if anchored is not None:
        result["plain_final_cost"] = report.final.cost
        result["anchor_penalty"] = anchored.final.anchor_penalty if anchored.completed \
            else None
    run.write_json("result.json", result)
    headline = {"final_alpha": final_report.final.alpha if final_report.completed else None,
                "final_cost": final_report.final.cost if final_report.completed else None,
                "stages_completed": len(final_report.completed)}
    run.write_manifest(cfg.sha256, headline, failures)
    for s in final_report.stages:
        print(f"alpha={s.alpha:.6g} " + (f"cost={s.cost:.12g}" if s.ok else f"FAILED: {s.error}"))
    return EXIT_FAILED if final_report.aborted or not final_report.completed else EXIT_OK


def cmd_check_gradient(cfg: RunConfig, args) -> int:
    problem = ReducedProblem(cfg.model, cfg.targets, cfg.weights, cfg.alpha,
                             cfg.admissible, newton=cfg.newton)
    rep = fd_gradient(problem, cfg.admissible.project(cfg.u_initial), cfg.fd_spec)
    run = _run_dir(cfg, args, "check-gradient")
    export_gradient_check(run, rep)
    best = rep.worst_best
    threshold = float(cfg.solver["fd_threshold"])
    run.write_manifest(cfg.sha256, {"best_relative_error": best, "threshold": threshold},
                       rep.failures)
    print(f"best relative error {best:.3e} over {len(rep.best_errors)} directions "
          f"(threshold {threshold:g})")
    return EXIT_OK if best <= threshold and not rep.failures else EXIT_FAILED


def cmd_oracle_compare(cfg: RunConfig, args) -> int:
    ref = obstacle_trajectory(cfg.model, cfg.oracle_control, cfg.oracle_options)
    table = compare_quench_to_obstacle(cfg.model, cfg.oracle_control, cfg.schedule.alphas,
                                       newton=cfg.newton, reference=ref)
    run = _run_dir(cfg, args, "oracle-compare")
    export_decay(run, table)
    threshold = float(cfg.solver["decay_threshold"])
    ok = table.strictly_decreasing and table.l2_q[-1] <= threshold
    run.write_manifest(cfg.sha256, {"strictly_decreasing": table.strictly_decreasing,
                                    "final_distance": table.l2_q[-1],
                                    "oracle_mass_error": float(ref.mass_error.max())},
                       [] if ok else ["decay check failed"])
    for a, d in zip(table.alphas, table.l2_q):
        print(f"alpha={a:.6g} L2(Q) distance {d:.6e}")
    return EXIT_OK if ok else EXIT_FAILED


COMMANDS = {
    "simulate": (cmd_simulate, "integrate the state equation under the initial control"),
    "optimize": (cmd_optimize, "projected gradient descent at a fixed alpha"),
    "quench": (cmd_quench, "deep-quench continuation with certificates"),
    "check-gradient": (cmd_check_gradient, "adjoint gradient against finite differences"),
    "oracle-compare": (cmd_oracle_compare, "barrier trajectories against the obstacle oracle"),
    "validate-config": (cmd_validate, "check a config without solving"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chquench", description="Barrier-regularised boundary control of "
                     "viscous Cahn-Hilliard with deep-quench continuation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("--out", help="run directory (overrides the config and environment)")
        p.add_argument("--alpha", type=float, help="override [quench] alpha")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.alpha is not None:
            if not 0.0 < args.alpha <= 1.0:
                raise ConfigError(f"--alpha must lie in (0, 1], got {args.alpha}")
            cfg.data["quench"]["alpha"] = args.alpha
    except ConfigError as exc:
        where = f"{args.config}:{exc.line}: " if exc.line else f"{args.config}: "
        print(f"error: {where}{exc}".replace(f"line {exc.line}: ", ""), file=sys.stderr)
        return EXIT_INVALID
    handler = COMMANDS[args.command][0]
    try:
        return handler(cfg, args)
    except (SolverError, DomainError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
