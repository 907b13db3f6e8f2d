"""Implicit Euler solver for the barrier-regularised viscous Cahn-Hilliard
system with a dynamic boundary condition.

One step solves, for the unknowns ``(y, w)`` at the new time level and with
the boundary trace ``y_G = P y`` eliminated through the compatibility
constraint::

    R1 = M (y - y_old)/dt + K w                                   = 0
    R2 = M (y - y_old)/dt + K y + M F'(y) - M w
         + P^T [ M_G (y_G - y_G,old)/dt + K_G y_G + M_G (G'(y_G) - u) ] = 0

with ``F' = phi h' + f2'`` and ``G' = psi h' + g2'``.  The rows are the weak
forms tested against the nodal basis of the trace-compatible space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .elliptic import SolverError
from .geometry import FieldPair, Grid, mean_value
from .potentials import DomainError, Potentials

__all__ = [
    "Model",
    "NewtonOptions",
    "StateSnapshot",
    "StateTrajectory",
    "step_state",
    "solve_state",
    "state_residual",
    "energy",
    "static_chemical_potential",
    "trapezoid_weights",
]

log = logging.getLogger(__name__)


def trapezoid_weights(n_steps: int, dt: float) -> np.ndarray:
    c = np.full(n_steps + 1, dt)
    c[0] = c[-1] = 0.5 * dt
    return c


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    retry_cap: int = 5
    damping: float = 0.99


@dataclass(frozen=True, eq=False)
class Model:
    """Grid, free energy, initial datum and uniform time grid."""

    grid: Grid
    potentials: Potentials
    y0: np.ndarray
    T: float
    n_steps: int

    def __post_init__(self):
        y0 = self.grid.check_bulk(self.y0, "y0")
        if not np.all(np.abs(y0) < 1.0):
            raise ValueError("initial datum must satisfy -1 < y0 < 1 (A3)")
        if self.T <= 0 or self.n_steps < 1:
            raise ValueError("need T > 0 and at least one time step")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    @cached_property
    def time_weights(self) -> np.ndarray:
        return trapezoid_weights(self.n_steps, self.dt)

    @property
    def m0(self) -> float:
        return mean_value(self.grid, self.y0)

    @property
    def control_shape(self) -> tuple[int, int]:
        return (self.n_steps + 1, self.grid.n_boundary)

    @cached_property
    def boundary_mass_full(self) -> np.ndarray:
        """``diag(P^T M_G P)`` as a bulk vector."""
        mb = np.zeros(self.grid.n_nodes)
        mb[self.grid.boundary] = self.grid.boundary_mass
        return mb

    @cached_property
    def boundary_stiffness_full(self) -> sps.csr_matrix:
        P = self.grid.trace
        return (P.T @ self.grid.boundary_stiffness @ P).tocsr()

    @cached_property
    def _jacobian_base(self):
        g = self.grid
        n = g.n_nodes
        M = sps.diags(g.mass)
        A0 = g.stiffness + self.boundary_stiffness_full
        # dt-dependent diagonal blocks are added per step
        return sps.bmat([[sps.csr_matrix((n, n)), g.stiffness],
                         [A0, -M]], format="csr")

    def jacobian(self, y, alpha, dt) -> sps.csc_matrix:
        """Jacobian of ``(R1, R2)`` with respect to ``(y, w)``."""
        g = self.grid
        n = g.n_nodes
        mb = self.boundary_mass_full
        d_lower = g.mass / dt + mb / dt + g.mass * self.potentials.bulk_second(alpha, y)
        d_lower[g.boundary] += g.boundary_mass * self.potentials.surface_second(
            alpha, y[g.boundary])
        J = (self._jacobian_base
             + sps.diags(np.concatenate([g.mass / dt, np.zeros(n)]), 0)
             + sps.diags(d_lower, -n, shape=(2 * n, 2 * n)))
        return J.tocsc()

    def residual(self, y, w, y_old, u, alpha, dt) -> np.ndarray:
        g = self.grid
        b = g.boundary
        mdy = g.mass * (y - y_old) / dt
        r1 = mdy + g.stiffness @ w
        r2 = (mdy + g.stiffness @ y + g.mass * self.potentials.bulk_derivative(alpha, y)
              - g.mass * w)
        yb = y[b]
        r2[b] += (g.boundary_mass * (yb - y_old[b]) / dt
                  + g.boundary_stiffness @ yb
                  + g.boundary_mass * (self.potentials.surface_derivative(alpha, yb) - u))
        return np.concatenate([r1, r2])


@dataclass(frozen=True)
class StateSnapshot:
    """``(y, y_G)`` with the chemical potential ``w`` at time ``t``."""

    y: np.ndarray
    y_gamma: np.ndarray
    w: np.ndarray
    t: float

    @classmethod
    def from_bulk(cls, grid: Grid, y, w, t: float) -> "StateSnapshot":
        y = grid.check_bulk(y, "y")
        return cls(y, grid.restrict(y).copy(), grid.check_bulk(w, "w"), float(t))

    @property
    def pair(self) -> FieldPair:
        return FieldPair(self.y, self.y_gamma)


@dataclass
class StepInfo:
    iterations: int
    residual: float
    substeps: int = 1
    history: list = field(default_factory=list)


@dataclass(eq=False)
class StateTrajectory:
    """Order parameter and chemical potential on the time grid.

    ``micro[k-1]`` lists ``(theta, y, w)`` for each implicit sub-step used to
    reach ``t_k``; ``theta`` is the fraction of the macro step completed.
    Without retries every entry is ``[(1.0, y[k], w[k])]``.
    """

    model: Model
    alpha: float
    y: np.ndarray
    w: np.ndarray
    steps: list[StepInfo]
    micro: list[list[tuple[float, np.ndarray, np.ndarray]]]

    @property
    def times(self) -> np.ndarray:
        return self.model.times

    @property
    def dt(self) -> float:
        return self.model.dt

    @property
    def y_gamma(self) -> np.ndarray:
        return self.y[:, self.model.grid.boundary]

    @property
    def m0(self) -> float:
        return self.model.m0

    def snapshot(self, k: int) -> StateSnapshot:
        return StateSnapshot.from_bulk(self.model.grid, self.y[k], self.w[k],
                                       self.times[k])

    def pair(self, k: int) -> FieldPair:
        return FieldPair(self.y[k], self.y_gamma[k])

    @property
    def mass_error(self) -> np.ndarray:
        g = self.model.grid
        return np.abs(self.y @ g.mass / g.volume - self.m0)

    @property
    def margins(self) -> np.ndarray:
        """``1 - max|y|`` per time level (bulk and trace)."""
        return 1.0 - np.max(np.abs(self.y), axis=1)

    def monitors(self) -> dict:
        """Norms whose boundedness uniformly in alpha the a priori theory asserts."""
        g = self.model.grid
        K, Kb = g.stiffness, g.boundary_stiffness
        dt = self.dt
        dy = np.diff(self.y, axis=0) / dt
        dyb = np.diff(self.y_gamma, axis=0) / dt
        h1 = np.array([np.sqrt(y @ (K @ y) + y @ (g.mass * y)) for y in self.y])
        yb = self.y_gamma
        h1b = np.array([np.sqrt(v @ (Kb @ v) + v @ (g.boundary_mass * v)) for v in yb])
        lap = np.array([np.sqrt(np.sum((K @ y) ** 2 / g.mass)) for y in self.y])
        return {
            "dt_y_l2": float(np.sqrt(dt * np.sum(dy**2 @ g.mass))),
            "dt_y_gamma_l2": float(np.sqrt(dt * np.sum(dyb**2 @ g.boundary_mass))),
            "y_h1_sup": float(h1.max()),
            "y_gamma_h1_sup": float(h1b.max()),
            "y_h2_l2": float(np.sqrt(dt * np.sum(lap[1:] ** 2))),
            "min_margin": float(self.margins.min()),
        }


def static_chemical_potential(model: Model, y, u_slice, alpha) -> np.ndarray:
    """Chemical potential of ``y`` with the time-derivative terms dropped."""
    g = model.grid
    b = g.boundary
    r = g.stiffness @ y + g.mass * model.potentials.bulk_derivative(alpha, y)
    r[b] += (g.boundary_stiffness @ y[b]
             + g.boundary_mass * (model.potentials.surface_derivative(alpha, y[b]) - u_slice))
    return r / g.mass


def _fraction_to_boundary(y, dy, damping):
    theta = 1.0
    up, dn = dy > 0, dy < 0
    if np.any(up):
        theta = min(theta, float(np.min(damping * (1.0 - y[up]) / dy[up])))
    if np.any(dn):
        theta = min(theta, float(np.min(damping * (-1.0 - y[dn]) / dy[dn])))
    return theta


def _newton(model, y_old, w_guess, u_slice, alpha, dt, opts: NewtonOptions):
    n = model.grid.n_nodes
    y, w = y_old.copy(), w_guess.copy()
    R = model.residual(y, w, y_old, u_slice, alpha, dt)
    norm = float(np.linalg.norm(R))
    history = [norm]
    for it in range(opts.max_iter + 1):
        if norm <= opts.tol:
            return y, w, StepInfo(it, norm, history=history)
        if it == opts.max_iter:
            break
        try:
            delta = -spla.splu(model.jacobian(y, alpha, dt)).solve(R)
        except RuntimeError as exc:
            raise SolverError(f"singular Newton matrix: {exc}", norm, history) from exc
        dy, dw = delta[:n], delta[n:]
        theta = _fraction_to_boundary(y, dy, opts.damping)
        for _ in range(40):
            y_try, w_try = y + theta * dy, w + theta * dw
            try:
                R_try = model.residual(y_try, w_try, y_old, u_slice, alpha, dt)
            except DomainError:
                # the trial point rounded onto the barrier
                theta *= 0.5
                continue
            norm_try = float(np.linalg.norm(R_try))
            if norm_try <= (1.0 - 1e-4 * theta) * norm:
                break
            theta *= 0.5
        else:
            break
        y, w, R, norm = y_try, w_try, R_try, norm_try
        history.append(norm)
    raise SolverError(
        f"Newton did not converge: residual {norm:.3e} after {len(history) - 1} "
        "iterations", norm, history,
    )


def step_state(model: Model, prev: StateSnapshot, u_slice, alpha: float,
               dt: float, options: NewtonOptions | None = None):
    """Advance one implicit Euler step; returns ``(snapshot, StepInfo)``."""
    opts = options or NewtonOptions()
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    u_slice = model.grid.check_boundary(u_slice, "u_slice")
    y, w, info = _newton(model, prev.y, prev.w, u_slice, alpha, dt, opts)
    return StateSnapshot.from_bulk(model.grid, y, w, prev.t + dt), info


def _control_at(u, k, theta_prev, theta):
    """Mean of the piecewise-linear control over a (sub-)interval of step k."""
    mid = 0.5 * (theta_prev + theta)
    return (1.0 - mid) * u[k - 1] + mid * u[k]


def solve_state(model: Model, u, alpha: float,
                options: NewtonOptions | None = None) -> StateTrajectory:
    """Integrate from ``model.y0`` over the full time grid under control ``u``.

    ``u`` has shape ``(n_steps + 1, n_boundary)``, nodal values of a
    piecewise-linear control; each implicit step is forced by its mean over
    the step.  A failed step is retried with 2, 4, ... sub-steps up to
    ``options.retry_cap`` halvings.
    """
    opts = options or NewtonOptions()
    u = np.asarray(u, dtype=float)
    if u.shape != model.control_shape:
        raise ValueError(f"control has shape {u.shape}, expected {model.control_shape}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    K, dt = model.n_steps, model.dt
    ys = np.empty((K + 1, model.grid.n_nodes))
    ws = np.empty_like(ys)
    ys[0] = model.y0
    ws[0] = static_chemical_potential(model, model.y0, u[0], alpha)
    steps, micro = [], []
    for k in range(1, K + 1):
        for level in range(opts.retry_cap + 1):
            nsub = 2**level
            try:
                y, w = ys[k - 1], ws[k - 1]
                sub, iters, hist = [], 0, []
                for s in range(1, nsub + 1):
                    theta = s / nsub
                    y, w, info = _newton(model, y, w, _control_at(u, k, (s - 1) / nsub, theta),
                                         alpha, dt / nsub, opts)
                    sub.append((theta, y, w))
                    iters += info.iterations
                    hist.extend(info.history)
                break
            except (SolverError, DomainError) as exc:
                if level == opts.retry_cap:
                    raise SolverError(f"step {k} failed after {level} halvings: {exc}",
                                      getattr(exc, "residual", None),
                                      getattr(exc, "history", None)) from exc
                log.debug("step %d failed with %d sub-steps, halving dt", k, nsub)
        ys[k], ws[k] = y, w
        steps.append(StepInfo(iters, info.residual, nsub, hist))
        micro.append(sub)
    return StateTrajectory(model, float(alpha), ys, ws, steps, micro)


def state_residual(model: Model, traj: StateTrajectory, u, alpha: float) -> list[float]:
    """Max-norm weak-form residual per macro step (over its sub-steps)."""
    u = np.asarray(u, dtype=float)
    out = []
    for k in range(1, traj.y.shape[0]):
        y_prev, th_prev, worst = traj.y[k - 1], 0.0, 0.0
        for theta, y, w in traj.micro[k - 1]:
            dt = model.dt * (theta - th_prev)
            R = model.residual(y, w, y_prev, _control_at(u, k, th_prev, theta), alpha, dt)
            worst = max(worst, float(np.max(np.abs(R))))
            y_prev, th_prev = y, theta
        out.append(worst)
    return out


def energy(model: Model, snapshot, u_slice, alpha: float) -> float:
    """Free energy of a state including the boundary control work."""
    g = model.grid
    pot = model.potentials
    phi, psi = pot.scaling(alpha)
    y = snapshot.y if isinstance(snapshot, StateSnapshot) else np.asarray(snapshot)
    yb = y[g.boundary]
    u_slice = g.check_boundary(u_slice, "u_slice")
    bulk = 0.5 * y @ (g.stiffness @ y) + g.mass @ (
        phi * pot.log.value(y) + pot.smooth.value("bulk", y))
    surf = 0.5 * yb @ (g.boundary_stiffness @ yb) + g.boundary_mass @ (
        psi * pot.log.value(yb) + pot.smooth.value("surface", yb) - u_slice * yb)
    return float(bulk + surf)
