"""Independent checks: finite-difference gradients and an obstacle-problem solver.

The obstacle oracle advances the time-discrete problem with the indicator of
``[-1, 1]`` in place of the barrier.  Each step alternates

* an inner projected Gauss-Seidel solve for ``y`` with the chemical
  potential frozen (smooth parts linearised at the current iterate), and
* an outer update ``w = N(-(y - y_old)/dt) + c`` where the constant ``c``
  is found by root bracketing so that the mean of ``y`` is conserved.

The subdifferential selections are recovered afterwards from the residual of
the smooth equation.  At a boundary node only the sum of the bulk and
surface selections is determined; both are reported as that common value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .adjoint import CostWeights, Targets
from .control import Admissible, ReducedProblem, sigma_inner
from .elliptic import SolverError, neumann_inverse
from .kernels import pgs_sweeps
from .state import Model, NewtonOptions, StateSnapshot, solve_state

__all__ = [
    "FDGradientSpec",
    "FDReport",
    "fd_gradient",
    "ObstacleOptions",
    "ObstacleStep",
    "ObstacleTrajectory",
    "obstacle_step_oracle",
    "obstacle_trajectory",
    "oracle_complementarity",
    "DecayTable",
    "compare_quench_to_obstacle",
    "MAX_ORACLE_NODES",
]

log = logging.getLogger(__name__)

MAX_ORACLE_NODES = 257


@dataclass(frozen=True)
class FDGradientSpec:
    steps: tuple[float, ...] = (1e-3, 1e-4, 1e-5, 1e-6)
    seed: int = 0
    n_directions: int = 20

    def __post_init__(self):
        steps = tuple(float(s) for s in self.steps)
        if not steps or min(steps) <= 0:
            raise ValueError("finite-difference steps must be positive")
        if any(b >= a for a, b in zip(steps, steps[1:])):
            raise ValueError("finite-difference steps must be strictly decreasing")
        if self.n_directions < 1:
            raise ValueError("need at least one direction")
        object.__setattr__(self, "steps", steps)


@dataclass(eq=False)
class FDReport:
    """``rows`` holds (direction, step, fd, adjoint, rel_error) tuples."""

    best_errors: list[float]
    rows: list[tuple]
    failures: list[str] = field(default_factory=list)

    @property
    def worst_best(self) -> float:
        """Largest over directions of the best-step relative error."""
        return max(self.best_errors) if self.best_errors else float("nan")


def _rel(fd, ad):
    scale = max(abs(fd), abs(ad))
    return 0.0 if scale == 0.0 else abs(fd - ad) / scale


def fd_gradient(problem: ReducedProblem, u, spec: FDGradientSpec | None = None) -> FDReport:
    """Central differences of the reduced cost against the adjoint gradient.

    Directions are standard normal, zeroed where ``u`` sits on a bound so that
    both one-sided perturbations stay meaningful.
    """
    spec = spec or FDGradientSpec()
    u = np.asarray(u, dtype=float)
    adm = problem.admissible
    g = problem.gradient(u).copy()
    free = (u > adm.lower) & (u < adm.upper)
    rng = np.random.default_rng(spec.seed)
    best, rows, failures = [], [], []
    for d in range(spec.n_directions):
        h = rng.standard_normal(u.shape) * free
        ad = sigma_inner(problem.model, g, h)
        errs = []
        for eps in spec.steps:
            try:
                fd = (problem.cost(u + eps * h) - problem.cost(u - eps * h)) / (2.0 * eps)
            except SolverError as exc:
                failures.append(f"direction {d}, step {eps:g}: {exc}")
                continue
            err = _rel(fd, ad)
            rows.append((d, eps, fd, ad, err))
            errs.append(err)
        best.append(min(errs) if errs else float("inf"))
    return FDReport(best, rows, failures)


@dataclass(frozen=True)
class ObstacleOptions:
    outer_tol: float = 1e-9
    inner_tol: float = 1e-13
    max_outer: int = 1000
    max_sweeps: int = 10000
    mass_tol: float = 1e-12


@dataclass(frozen=True, eq=False)
class ObstacleStep:
    """One converged obstacle step.

    ``eta`` is the raw selection recovered from the smooth-equation residual
    at every node; ``xi``/``xi_gamma`` keep it on the contact set only.
    """

    y: np.ndarray
    w: np.ndarray
    xi: np.ndarray
    xi_gamma: np.ndarray
    eta: np.ndarray
    t: float
    outer_iterations: int
    sweeps: int
    mass_error: float
    r1_residual: float
    boundary: np.ndarray = field(repr=False)

    @property
    def y_gamma(self):
        return self.y[self.boundary]

    @property
    def snapshot(self) -> StateSnapshot:
        return StateSnapshot(self.y, self.y[self.boundary].copy(), self.w, self.t)


def _check_oracle_model(model: Model):
    if model.grid.dim != 1 or model.grid.n_nodes > MAX_ORACLE_NODES:
        raise ValueError(f"the obstacle oracle is limited to 1D grids with at most "
                         f"{MAX_ORACLE_NODES} nodes")


def _smooth_terms(model: Model, y):
    """Nodal first and second derivatives of the smooth energy, mass-weighted."""
    g = model.grid
    sm = model.potentials.smooth
    mb = model.boundary_mass_full
    d1 = g.mass * sm.first("bulk", y)
    d2 = g.mass * sm.second("bulk", y)
    b = g.boundary
    d1[b] += mb[b] * sm.first("surface", y[b])
    d2[b] += mb[b] * sm.second("surface", y[b])
    return d1, d2


def _mass_root(f, c0, ftol, max_iter=200):
    """Root of a nondecreasing ``f`` near ``c0`` by bracketing and Illinois regula falsi.

    Known bracket values are never recomputed, so evaluation noise at the
    level of the inner solver tolerance cannot break the bracket.  The last
    evaluation is always at the returned point.
    """
    a, fa = c0, f(c0)
    if abs(fa) <= ftol:
        return a
    step = 1.0
    direction = -1.0 if fa > 0 else 1.0
    for _ in range(max_iter):
        b = a + direction * step
        fb = f(b)
        if abs(fb) <= ftol:
            return b
        if np.sign(fb) != np.sign(fa):
            break
        a, fa, step = b, fb, 2.0 * step
    else:
        raise SolverError("could not bracket the mass constraint")
    side = 0
    for _ in range(max_iter):
        c = b - fb * (b - a) / (fb - fa)
        if not min(a, b) < c < max(a, b):
            c = 0.5 * (a + b)
        fc = f(c)
        if abs(fc) <= ftol or abs(b - a) <= 4 * np.finfo(float).eps * (1.0 + abs(c)):
            return c
        if np.sign(fc) == np.sign(fb):
            b, fb = c, fc
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = c, fc
            if side == 1:
                fb *= 0.5
            side = 1
    raise SolverError("mass constraint root search did not converge")


def obstacle_step_oracle(model: Model, prev, u_slice, dt: float,
                         options: ObstacleOptions | None = None) -> ObstacleStep:
    """One implicit Euler step of the obstacle problem (alpha = 0)."""
    _check_oracle_model(model)
    opts = options or ObstacleOptions()
    g = model.grid
    n = g.n_nodes
    b = g.boundary
    mb = model.boundary_mass_full
    y_old = np.asarray(prev.y if isinstance(prev, StateSnapshot) else prev, dtype=float)
    t_old = prev.t if isinstance(prev, StateSnapshot) else 0.0
    u_slice = g.check_boundary(u_slice, "u_slice")
    if dt <= 0:
        raise ValueError("dt must be positive")
    m_old = y_old @ g.mass / g.volume
    A0 = (sps.diags((g.mass + mb) / dt) + g.stiffness + model.boundary_stiffness_full).tocsr()
    base = (g.mass + mb) * y_old / dt
    base[b] += g.boundary_mass * u_slice
    lo, hi = -np.ones(n), np.ones(n)

    y = np.clip(y_old, -1.0, 1.0)
    c_shift = 0.0
    sweeps_total = 0
    for outer in range(1, opts.max_outer + 1):
        dy = -(y - y_old) / dt
        dy -= dy @ g.mass / g.volume
        w_tilde = (neumann_inverse(g, dy, tol=1e-12, method="direct") if np.any(dy)
                   else np.zeros(n))
        d1, d2 = _smooth_terms(model, y)
        A = (A0 + sps.diags(d2)).tocsr()
        A.sort_indices()
        indptr = A.indptr.astype(np.int32)
        indices = A.indices.astype(np.int32)
        data = A.data.astype(float)
        rhs0 = base + g.mass * w_tilde - d1 + d2 * y
        work = y.copy()

        def mass_gap(c):
            nonlocal sweeps_total
            s, _ = pgs_sweeps(indptr, indices, data, rhs0 + g.mass * c, work, lo, hi,
                              opts.max_sweeps, opts.inner_tol)
            sweeps_total += s
            return work @ g.mass / g.volume - m_old

        c_new = _mass_root(mass_gap, c_shift, opts.mass_tol)
        y_new = work.copy()
        change = float(np.max(np.abs(y_new - y)))
        y, c_shift = y_new, c_new
        w = w_tilde + c_shift
        if change <= opts.outer_tol:
            break
    else:
        raise SolverError(f"obstacle oracle: outer iteration stalled at change {change:.3e}",
                          change)

    d1, _ = _smooth_terms(model, y)
    r = A0 @ y + d1 - base - g.mass * w
    eta = -r / (g.mass + mb)
    contact = np.abs(y) >= 1.0
    xi = np.where(contact, eta, 0.0)
    r1 = g.mass * (y - y_old) / dt + g.stiffness @ w
    return ObstacleStep(
        y=y, w=w, xi=xi, xi_gamma=xi[b].copy(), eta=eta, t=t_old + dt,
        outer_iterations=outer, sweeps=sweeps_total,
        mass_error=abs(y @ g.mass / g.volume - m_old),
        r1_residual=float(np.max(np.abs(r1) / g.mass)), boundary=b,
    )


def oracle_complementarity(step: ObstacleStep, interior_gap: float = 1e-6) -> dict:
    """Sign and complementarity measures of the recovered selection."""
    y, eta = step.y, step.eta
    up, dn = y >= 1.0, y <= -1.0
    free = np.abs(y) < 1.0 - interior_gap
    return {
        "complementarity": float(np.max(np.abs(eta) * (1.0 - np.abs(y)))),
        "min_upper": float(np.min(eta[up])) if np.any(up) else 0.0,
        "max_lower": float(np.max(eta[dn])) if np.any(dn) else 0.0,
        "max_free": float(np.max(np.abs(eta[free]))) if np.any(free) else 0.0,
        "n_upper": int(up.sum()),
        "n_lower": int(dn.sum()),
    }


@dataclass(eq=False)
class ObstacleTrajectory:
    model: Model
    y: np.ndarray
    w: np.ndarray
    steps: list[ObstacleStep]

    @property
    def y_gamma(self):
        return self.y[:, self.model.grid.boundary]

    @property
    def mass_error(self) -> np.ndarray:
        g = self.model.grid
        return np.abs(self.y @ g.mass / g.volume - self.model.m0)


def obstacle_trajectory(model: Model, u, options: ObstacleOptions | None = None
                        ) -> ObstacleTrajectory:
    """Obstacle-problem states on the model time grid under control ``u``.

    Each step is forced by the mean of the piecewise-linear control, as in
    the barrier solver.
    """
    _check_oracle_model(model)
    u = np.asarray(u, dtype=float)
    if u.shape != model.control_shape:
        raise ValueError(f"control has shape {u.shape}, expected {model.control_shape}")
    if np.any(np.abs(model.y0) > 1.0):
        raise ValueError("initial datum must lie in [-1, 1]")
    ys = [model.y0.copy()]
    ws = [np.zeros(model.grid.n_nodes)]
    steps = []
    prev = StateSnapshot.from_bulk(model.grid, model.y0, ws[0], 0.0)
    for k in range(1, model.n_steps + 1):
        step = obstacle_step_oracle(model, prev, 0.5 * (u[k - 1] + u[k]), model.dt, options)
        steps.append(step)
        ys.append(step.y)
        ws.append(step.w)
        prev = step.snapshot
    ws[0] = ws[1] if len(ws) > 1 else ws[0]
    return ObstacleTrajectory(model, np.array(ys), np.array(ws), steps)


@dataclass(eq=False)
class DecayTable:
    """Distance of barrier trajectories to the obstacle trajectory per alpha."""

    alphas: list[float]
    l2_q: list[float]
    l2_sigma: list[float]
    max_abs: list[float]

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.l2_q, self.l2_q[1:]))

    def rows(self):
        return [{"alpha": a, "l2_q": q, "l2_sigma": s, "max_abs": m}
                for a, q, s, m in zip(self.alphas, self.l2_q, self.l2_sigma, self.max_abs)]


def compare_quench_to_obstacle(model: Model, u, alphas, options: ObstacleOptions | None = None,
                               newton: NewtonOptions | None = None,
                               reference: ObstacleTrajectory | None = None) -> DecayTable:
    """``||y_alpha - y_obstacle||`` in L2(Q), L2(Sigma) and max norm for each alpha."""
    ref = reference or obstacle_trajectory(model, u, options)
    g = model.grid
    c = model.time_weights
    out = DecayTable([], [], [], [])
    for alpha in alphas:
        traj = solve_state(model, u, alpha, newton)
        d = traj.y - ref.y
        out.alphas.append(float(alpha))
        out.l2_q.append(float(np.sqrt(c @ (d**2 @ g.mass))))
        out.l2_sigma.append(float(np.sqrt(c @ (d[:, g.boundary] ** 2 @ g.boundary_mass))))
        out.max_abs.append(float(np.max(np.abs(d))))
    return out


def gradient_check_problem(model: Model, alpha: float, weights: CostWeights,
                           targets: Targets, admissible: Admissible | None = None
                           ) -> ReducedProblem:
    return ReducedProblem(model, targets, weights, alpha, admissible)
