"""Acceptance criteria on the reference problem.

Each test records a ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line that is printed in the terminal summary, then asserts.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from chquench.adjoint import CostWeights, Targets
from chquench.cli import main
from chquench.control import Admissible, ReducedProblem, projected_gradient_descent
from chquench.elliptic import dual_norm, neumann_inverse
from chquench.geometry import build_grid
from chquench.oracles import (
    FDGradientSpec,
    compare_quench_to_obstacle,
    fd_gradient,
    obstacle_step_oracle,
    obstacle_trajectory,
    oracle_complementarity,
)
from chquench.potentials import Potentials
from chquench.quench import QuenchSchedule, run_quench
from chquench.state import Model, StateSnapshot, solve_state

CONFIG = str(Path(__file__).resolve().parent.parent / "configs" / "acceptance.toml")
ALPHAS_1 = (1.0, 1 / 32, 1 / 1024)


def record(n, ok, detail):
    conftest.ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    print(conftest.ACCEPTANCE_LINES[-1])
    assert ok, detail


def _controls(model):
    rng = np.random.default_rng(0)
    return {"zero": np.zeros(model.control_shape),
            "random": rng.uniform(-1.0, 1.0, model.control_shape)}


@pytest.fixture(scope="module")
def model():
    return conftest.reference_model()


@pytest.fixture(scope="module")
def trajectories(model):
    out = {}
    for alpha in ALPHAS_1:
        for name, u in _controls(model).items():
            t0 = time.perf_counter()
            traj = solve_state(model, u, alpha)
            out[alpha, name] = (traj, time.perf_counter() - t0)
    return out


def test_criterion_01_mass_conservation(trajectories):
    err = max(tr.mass_error.max() for tr, _ in trajectories.values())
    slowest = max(dt for _, dt in trajectories.values())
    ok = err <= 1e-9 and slowest <= 10.0
    record(1, ok, f"max |mean(y_k) - m0| = {err:.2e} (<= 1e-9) for alpha in "
                  f"{{1, 1/32, 1/1024}}, slowest solve {slowest:.2f} s (<= 10 s)")


def test_criterion_02_strict_interior(trajectories):
    worst = 1.0
    for traj, _ in trajectories.values():
        for sub in traj.micro:
            for _, y, _ in sub:
                worst = min(worst, 1.0 - float(np.max(np.abs(y))))
        recorded = traj.monitors()["min_margin"]
        assert recorded == pytest.approx(float(traj.margins.min()))
    record(2, worst > 0.0, f"min barrier margin 1 - max|y| = {worst:.3e} over every "
                           "accepted Newton solve (> 0)")


def test_criterion_03_inverse_neumann_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for grid in (build_grid(1, 64, 1.0), build_grid(2, (16, 12), (1.0, 0.75))):
        M, K = grid.mass, grid.stiffness
        for _ in range(25):
            v, w = rng.standard_normal((2, grid.n_nodes))
            v -= (M @ v) / grid.volume
            w -= (M @ w) / grid.volume
            Nv = neumann_inverse(grid, v, tol=1e-13, method="direct")
            Nw = neumann_inverse(grid, w, tol=1e-13, method="direct")
            pair = v @ (M * Nv)
            worst = max(worst, abs(pair - dual_norm(grid, v) ** 2) / pair,
                        abs(pair - Nv @ (K @ Nv)) / pair,
                        abs(w @ (M * Nv) - v @ (M * Nw)) / np.sqrt(pair * (w @ (M * Nw))))
    elapsed = time.perf_counter() - t0
    record(3, worst <= 1e-9 and elapsed <= 5.0,
           f"<v, N v> = ||v||_*^2 and symmetry on 50 zero-mean fields, worst relative "
           f"error {worst:.2e} (<= 1e-9), {elapsed:.2f} s (<= 5 s)")


@pytest.fixture(scope="module")
def gradient_setup(model, ref_targets_m, ref_weights_m, ref_admissible_m):
    prob = ReducedProblem(model, ref_targets_m, ref_weights_m, 1 / 32, ref_admissible_m)
    u = np.random.default_rng(7).uniform(-0.5, 0.5, model.control_shape)
    t0 = time.perf_counter()
    rep = fd_gradient(prob, u, FDGradientSpec(n_directions=20))
    return prob, u, rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ref_targets_m(model):
    return Targets.constant(model, 0.2, 0.2)


@pytest.fixture(scope="module")
def ref_weights_m():
    return CostWeights(1.0, 1.0, 0.0, 0.0, 0.01)


@pytest.fixture(scope="module")
def ref_admissible_m():
    return Admissible(-1.0, 1.0, 10.0)


def test_criterion_04_gradient_check(gradient_setup):
    _, _, rep, elapsed = gradient_setup
    ok = rep.worst_best <= 1e-6 and not rep.failures and elapsed <= 120
    record(4, ok, f"adjoint vs central differences over {len(rep.best_errors)} directions at "
                  f"alpha = 1/32, worst best-step relative error {rep.worst_best:.2e} "
                  f"(<= 1e-6), {elapsed:.1f} s (<= 120 s)")


def test_criterion_05_adjoint_structure(gradient_setup):
    prob, u, _, _ = gradient_setup
    adj = prob.adjoint(u)
    g = prob.model.grid
    terminal = not np.any(adj.q[-1]) and not np.any(adj.q_gamma[-1])
    mean = float(np.max(np.abs(adj.mean_q())))
    lap = float(max(np.max(np.abs(g.stiffness @ p / g.mass - q)) for q, p in zip(adj.q, adj.p)))
    ok = terminal and mean <= 1e-9 and lap <= 1e-9
    record(5, ok, f"q(T) = q_G(T) = 0 exactly: {terminal}; max |mean q| = {mean:.2e} "
                  f"(<= 1e-9); max |-Lap_h p - q| = {lap:.2e} (<= 1e-9)")


def test_criterion_06_optimality_certificates(model, ref_targets_m, ref_weights_m,
                                              ref_admissible_m):
    t0 = time.perf_counter()
    prob = ReducedProblem(model, ref_targets_m, ref_weights_m, 1 / 1024, ref_admissible_m)
    res = projected_gradient_descent(prob, np.zeros(model.control_shape), tol=1e-7)
    elapsed = time.perf_counter() - t0
    inactive = res.dt_u_norm < ref_admissible_m.m0_bound
    ok = (res.converged and res.vi_residual >= -1e-6 and inactive
          and res.fixed_point_gap <= 1e-5 and elapsed <= 600)
    record(6, ok, f"alpha = 1/1024 after {res.iterations} iterations (converged: "
                  f"{res.converged}): VI minimum {res.vi_residual:.2e} (>= -1e-6), fixed-point "
                  f"gap {res.fixed_point_gap:.2e} (<= 1e-5), ||d_t u|| = {res.dt_u_norm:.3f} "
                  f"< M0 = 10, {elapsed:.1f} s (<= 600 s)")


@pytest.fixture(scope="module")
def quench(model, ref_targets_m, ref_weights_m, ref_admissible_m):
    t0 = time.perf_counter()
    rep = run_quench(model, ref_targets_m, ref_weights_m, ref_admissible_m, QuenchSchedule())
    return rep, time.perf_counter() - t0


def test_criterion_07_deep_quench_complementarity(quench):
    rep, elapsed = quench
    stages = rep.completed
    complete = len(stages) == 11 and not rep.aborted
    a = all(s.metrics["lam_q"] >= 0 and s.metrics["lam_q_gamma"] >= 0 for s in stages)
    decay = [s.metrics["interior_decay"] for s in stages]
    b = all(y < x for x, y in zip(decay, decay[1:])) and decay[-1] <= 1e-2
    c = all(s.metrics["concentration"] <= s.metrics["concentration_bound"] for s in stages)
    ok = complete and a and b and c and elapsed <= 1200
    record(7, ok, f"{len(stages)}/11 stages; (a) lam q >= 0 on Q and Sigma: {a}; "
                  f"(b) interior decay strictly decreasing to {decay[-1]:.2e} (<= 1e-2): {b}; "
                  f"(c) concentration <= 2 phi sup|q|: {c}; {elapsed:.1f} s (<= 1200 s)")


def test_criterion_08_quench_to_obstacle(model):
    t0 = time.perf_counter()
    u = np.full(model.control_shape, 0.1)
    table = compare_quench_to_obstacle(model, u, QuenchSchedule().alphas)
    elapsed = time.perf_counter() - t0
    ok = table.strictly_decreasing and table.l2_q[-1] <= 5e-3 and elapsed <= 600
    record(8, ok, f"L2(Q) distance to the obstacle trajectory strictly decreasing: "
                  f"{table.strictly_decreasing}, {table.l2_q[0]:.3e} -> {table.l2_q[-1]:.3e} "
                  f"(<= 5e-3), {elapsed:.1f} s (<= 600 s)")


def test_criterion_09_oracle_complementarity(model):
    t0 = time.perf_counter()
    steps = list(obstacle_trajectory(model, np.full(model.control_shape, 0.1)).steps)
    g = build_grid(1, 64, 1.0)
    forced = Model(g, Potentials(), 0.9 * np.cos(np.pi * g.coords[:, 0]), 0.1, 10)
    for u in (400.0, -400.0):
        prev = StateSnapshot.from_bulk(g, forced.y0, np.zeros(g.n_nodes), 0.0)
        for _ in range(3):
            step = obstacle_step_oracle(forced, prev, np.full(2, u), forced.dt)
            steps.append(step)
            prev = step.snapshot
    comps = [oracle_complementarity(s) for s in steps]
    worst = max(c["complementarity"] for c in comps)
    free = max(c["max_free"] for c in comps)
    clamped = sum(c["n_upper"] + c["n_lower"] for c in comps)
    signs = all(c["min_upper"] >= -1e-10 and c["max_lower"] <= 1e-10 for c in comps)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and free <= 1e-8 and signs and clamped > 0 and elapsed <= 120
    record(9, ok, f"{len(steps)} PGS steps: max xi (1 - |y|) = {worst:.2e} (<= 1e-8), "
                  f"max |xi| off contact = {free:.2e}, correct signs at {clamped} clamped "
                  f"nodes: {signs}, {elapsed:.1f} s (<= 120 s)")


def test_criterion_10_adapted_anchoring(model, quench, ref_targets_m, ref_weights_m,
                                        ref_admissible_m):
    plain, t_plain = quench
    t0 = time.perf_counter()
    adapted = run_quench(model, ref_targets_m, ref_weights_m, ref_admissible_m,
                         QuenchSchedule(), anchor=plain.final.u)
    elapsed = t_plain + time.perf_counter() - t0
    pen = adapted.final.anchor_penalty
    gap = abs(adapted.final.adapted_cost - plain.final.cost)
    ok = adapted.completed and pen <= 1e-4 and gap <= 1e-3 and elapsed <= 1800
    record(10, ok, f"anchor penalty at alpha = 1/1024: {pen:.2e} (<= 1e-4), "
                   f"|J~ - J| = {gap:.2e} (<= 1e-3), {elapsed:.1f} s (<= 1800 s)")


def _csv_bytes(run: Path):
    return {p.name: p.read_bytes() for p in sorted(run.glob("*.csv"))}


def test_criterion_11_determinism(tmp_path):
    runs = []
    for rep in ("a", "b"):
        out = {}
        for alpha in ALPHAS_1:
            d = tmp_path / rep / f"simulate_{alpha:g}"
            assert main(["simulate", CONFIG, "--alpha", repr(alpha), "--out", str(d)]) == 0
            out[d.name] = _csv_bytes(d)
        for cmd in ("check-gradient", "quench"):
            d = tmp_path / rep / cmd
            assert main([cmd, CONFIG, "--out", str(d)]) == 0
            out[cmd] = _csv_bytes(d)
        runs.append(out)
    n_files = sum(len(v) for v in runs[0].values())
    same = runs[0] == runs[1]
    record(11, same and n_files > 0, f"two invocations of simulate (3 alphas), check-gradient "
                                     f"and quench wrote {n_files} byte-identical CSV files: "
                                     f"{same}")
