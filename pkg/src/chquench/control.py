"""Tracking cost, reduced gradient and projected gradient descent.

Controls are nodal in time on the boundary chain, shape ``(n_steps + 1, nb)``.
The inner product on the control space is
``(u, v)_Sigma = sum_k c_k u_k . M_G v_k`` with trapezoid weights ``c_k``;
since it is diagonal the projection onto box bounds is a pointwise clamp and
the Riesz gradient is ``g = beta5 u + q_G`` on the control grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory, CostWeights, Targets, solve_adjoint
from .errors import ConfigError, SolverError
from .state import Model, NewtonOptions, StateTrajectory, solve_state

__all__ = [
    "Admissible",
    "ReducedProblem",
    "OptResult",
    "OptimizationError",
    "time_derivative_norm",
    "sigma_inner",
    "sigma_norm",
    "compute_cost",
    "compute_adapted_cost",
    "reduced_gradient",
    "project_admissible",
    "projected_gradient_descent",
    "vi_residual",
    "check_projection_fixed_point",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Admissible:
    """Box bounds on the control with an optional time-derivative budget.

    The budget ``||d_t u|| <= m0_bound`` is not projected onto; it is
    enforced through the exterior penalty
    ``penalty * max(0, ||d_t u|| - m0_bound)**2`` added to the cost.
    """

    lower: float | np.ndarray = -np.inf
    upper: float | np.ndarray = np.inf
    m0_bound: float | None = None
    penalty: float = 1e3

    def __post_init__(self):
        if not np.all(np.asarray(self.lower) <= np.asarray(self.upper)):
            raise ConfigError("control bounds need lower <= upper everywhere, so that "
                              "the admissible set is nonempty (A1)", "A1")
        if self.m0_bound is not None and not self.m0_bound > 0:
            raise ConfigError(f"M0 must be positive, got {self.m0_bound} (A1)", "A1")
        if self.penalty < 0:
            raise ConfigError("penalty weight must be nonnegative")

    def project(self, u):
        return np.clip(u, self.lower, self.upper)

    def contains(self, u, atol: float = 0.0) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.lower - atol) and np.all(u <= self.upper + atol))


def sigma_inner(model: Model, u, v) -> float:
    c = model.time_weights
    return float(np.sum(c[:, None] * model.grid.boundary_mass[None, :] * u * v))


def sigma_norm(model: Model, u) -> float:
    return float(np.sqrt(max(sigma_inner(model, u, u), 0.0)))


def time_derivative_norm(model: Model, u) -> float:
    du = np.diff(u, axis=0) / model.dt
    return float(np.sqrt(model.dt * np.sum(du**2 @ model.grid.boundary_mass)))


def _penalty(model: Model, u, adm: Admissible):
    """Value and Riesz gradient of the derivative-budget penalty."""
    if adm.m0_bound is None or adm.penalty == 0:
        return 0.0, np.zeros_like(u)
    nrm = time_derivative_norm(model, u)
    excess = nrm - adm.m0_bound
    if excess <= 0:
        return 0.0, np.zeros_like(u)
    dt = model.dt
    du = np.diff(u, axis=0) * model.grid.boundary_mass / dt  # d(nrm^2/2)/d(u_{k+1}) per step
    d = np.zeros_like(u)
    d[1:] += du
    d[:-1] -= du
    grad = 2.0 * adm.penalty * excess * d / nrm
    grad /= model.time_weights[:, None] * model.grid.boundary_mass[None, :]
    return adm.penalty * excess**2, grad


def compute_cost(traj: StateTrajectory, u, targets: Targets, weights: CostWeights) -> float:
    """Tracking functional with trapezoid quadrature in time."""
    model = traj.model
    g = model.grid
    c = model.time_weights
    yb = traj.y_gamma
    u = np.asarray(u, dtype=float)
    dq = ((traj.y - targets.z_q) ** 2) @ g.mass
    ds = ((yb - targets.z_sigma) ** 2) @ g.boundary_mass
    du = (u**2) @ g.boundary_mass
    return float(0.5 * c @ (weights.beta1 * dq + weights.beta2 * ds + weights.beta5 * du))


def compute_adapted_cost(traj: StateTrajectory, u, targets: Targets,
                         weights: CostWeights, anchor) -> float:
    """Cost plus ``||u - anchor||^2_Sigma / 2``, localising near a given control."""
    diff = np.asarray(u, dtype=float) - np.asarray(anchor, dtype=float)
    return compute_cost(traj, u, targets, weights) + 0.5 * sigma_inner(traj.model, diff, diff)


def project_admissible(u, admissible: Admissible):
    return admissible.project(np.asarray(u, dtype=float))


@dataclass(eq=False)
class _Eval:
    u: np.ndarray
    cost: float
    traj: StateTrajectory
    adjoint: AdjointTrajectory | None = None
    gradient: np.ndarray | None = None


class ReducedProblem:
    """``u -> J(S_alpha(u), u)`` with the state and adjoint solves cached.

    ``anchor`` switches to the adapted cost.  The most recent evaluation is
    reused when the same control is passed again.
    """

    def __init__(self, model: Model, targets: Targets, weights: CostWeights,
                 alpha: float, admissible: Admissible | None = None, anchor=None,
                 newton: NewtonOptions | None = None):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        targets.check(model)
        self.model = model
        self.targets = targets
        self.weights = weights
        self.alpha = float(alpha)
        self.admissible = admissible or Admissible()
        self.anchor = None if anchor is None else np.asarray(anchor, dtype=float)
        self.newton = newton or NewtonOptions()
        self.n_state_solves = 0
        self.n_adjoint_solves = 0
        self._last: _Eval | None = None

    def _evaluate(self, u) -> _Eval:
        u = np.asarray(u, dtype=float)
        if u.shape != self.model.control_shape:
            raise ValueError(f"control has shape {u.shape}, expected {self.model.control_shape}")
        if self._last is not None and np.array_equal(self._last.u, u):
            return self._last
        traj = solve_state(self.model, u, self.alpha, self.newton)
        self.n_state_solves += 1
        if self.anchor is None:
            cost = compute_cost(traj, u, self.targets, self.weights)
        else:
            cost = compute_adapted_cost(traj, u, self.targets, self.weights, self.anchor)
        cost += _penalty(self.model, u, self.admissible)[0]
        self._last = _Eval(u.copy(), cost, traj)
        return self._last

    def cost(self, u) -> float:
        return self._evaluate(u).cost

    def state(self, u) -> StateTrajectory:
        return self._evaluate(u).traj

    def gradient(self, u) -> np.ndarray:
        """Riesz representative of ``J'(u)`` in the ``Sigma`` inner product."""
        ev = self._evaluate(u)
        if ev.gradient is None:
            ev.adjoint = solve_adjoint(ev.traj, self.targets, self.weights)
            self.n_adjoint_solves += 1
            grad = ev.adjoint.control_trace + self.weights.beta5 * ev.u
            if self.anchor is not None:
                grad = grad + (ev.u - self.anchor)
            ev.gradient = grad + _penalty(self.model, ev.u, self.admissible)[1]
        return ev.gradient

    def adjoint(self, u) -> AdjointTrajectory:
        self.gradient(u)
        return self._evaluate(u).adjoint

    def project(self, u):
        return self.admissible.project(u)

    def directional(self, u, h) -> float:
        return sigma_inner(self.model, self.gradient(u), h)


def reduced_gradient(model: Model, u, alpha: float, targets: Targets,
                     weights: CostWeights, admissible: Admissible | None = None):
    """``(gradient, cost, state, adjoint)`` at ``u``."""
    prob = ReducedProblem(model, targets, weights, alpha, admissible)
    g = prob.gradient(u)
    return g, prob.cost(u), prob.state(u), prob.adjoint(u)


class OptimizationError(SolverError):
    """The line search failed; ``history`` holds the iterates' records."""


@dataclass(eq=False)
class OptResult:
    u: np.ndarray
    cost: float
    gradient: np.ndarray
    stationarity: float
    iterations: int
    converged: bool
    traj: StateTrajectory
    adjoint: AdjointTrajectory
    history: list = field(default_factory=list)
    message: str = ""
    vi_residual: float = float("nan")
    fixed_point_gap: float = float("nan")
    dt_u_norm: float = float("nan")

    @property
    def costs(self) -> list[float]:
        return [h["cost"] for h in self.history]

    def summary(self) -> dict:
        return {"cost": self.cost, "stationarity": self.stationarity,
                "iterations": self.iterations, "converged": self.converged,
                "vi_residual": self.vi_residual, "fixed_point_gap": self.fixed_point_gap,
                "dt_u_norm": self.dt_u_norm, "message": self.message}


def _gradient_mapping(problem: ReducedProblem, u, g, s: float = 1.0) -> float:
    return sigma_norm(problem.model, u - problem.project(u - s * g)) / s


def projected_gradient_descent(problem: ReducedProblem, u0, tol: float = 1e-7,
                               max_iter: int = 500, step: float = 1.0,
                               armijo: float = 1e-4, shrink: float = 0.5,
                               max_backtracks: int = 40) -> OptResult:
    """Projected gradient with Barzilai-Borwein trial steps and Armijo backtracking.

    Stops when the gradient mapping ``||u - P(u - g)||_Sigma`` drops to ``tol``.
    """
    model = problem.model
    u = problem.project(np.asarray(u0, dtype=float))
    J = problem.cost(u)
    g = problem.gradient(u)
    s = step
    history = []
    converged, message = False, "iteration limit reached"
    it = 0
    for it in range(max_iter + 1):
        gm = _gradient_mapping(problem, u, g)
        history.append({"iteration": it, "cost": J, "stationarity": gm, "step": s})
        log.debug("pgd %d: J=%.12g gm=%.3e s=%.3e", it, J, gm, s)
        if gm <= tol:
            converged, message = True, "stationarity tolerance met"
            break
        if it == max_iter:
            break
        for _ in range(max_backtracks):
            u_new = problem.project(u - s * g)
            J_new = problem.cost(u_new)
            if J_new <= J + armijo * sigma_inner(model, g, u_new - u):
                break
            s *= shrink
        else:
            raise OptimizationError(
                f"line search failed at iteration {it} (stationarity {gm:.3e})",
                gm, history)
        g_new = problem.gradient(u_new)
        du, dg = u_new - u, g_new - g
        curv = sigma_inner(model, du, dg)
        s = sigma_inner(model, du, du) / curv if curv > 0 else step
        s = float(np.clip(s, 1e-6, 1e3))
        u, J, g = u_new, J_new, g_new
    res = OptResult(u, J, g, history[-1]["stationarity"], it, converged,
                    problem.state(u), problem.adjoint(u), history, message)
    res.vi_residual = vi_residual(model, u, g, problem.admissible)
    res.dt_u_norm = time_derivative_norm(model, u)
    if problem.weights.beta5 > 0 and problem.anchor is None:
        res.fixed_point_gap = check_projection_fixed_point(
            model, u, res.adjoint.control_trace, problem.weights.beta5, problem.admissible)
    return res


def vi_residual(model: Model, u, gradient, admissible: Admissible,
                samples=None) -> float:
    """Most negative value of ``(g, v - u)_Sigma`` over admissible ``v``.

    Zero means the variational inequality holds.  With ``samples`` (an
    iterable of controls) the minimum runs over the projected samples;
    otherwise the exact minimiser over the box is used.  When a bound is
    infinite the gradient must vanish there, and the infinite minimum is
    replaced by ``-||g||`` restricted to those entries.
    """
    g = np.asarray(gradient, dtype=float)
    u = np.asarray(u, dtype=float)
    if samples is not None:
        vals = [sigma_inner(model, g, admissible.project(v) - u) for v in samples]
        return min(0.0, min(vals)) if vals else 0.0
    v = np.where(g > 0, admissible.lower, admissible.upper)
    v = np.where(g == 0, u, v)
    finite = np.isfinite(v)
    gf = np.where(finite, g, 0.0)
    vf = np.where(finite, v, u)
    out = sigma_inner(model, gf, vf - u)
    if not np.all(finite):
        out -= sigma_norm(model, np.where(finite, 0.0, g))
    return min(0.0, out)


def check_projection_fixed_point(model: Model, u, control_trace, beta5: float,
                                 admissible: Admissible) -> float:
    """``||u - P(-q_G / beta5)||_Sigma``; zero at a stationary point.

    Meaningful while the derivative budget is inactive.
    """
    if not beta5 > 0:
        raise ValueError("the projection formula needs beta5 > 0")
    target = admissible.project(-np.asarray(control_trace, dtype=float) / beta5)
    return sigma_norm(model, np.asarray(u, dtype=float) - target)
