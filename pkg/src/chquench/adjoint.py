"""Exact discrete adjoint of the implicit Euler state stepping.

The Lagrangian ``J + sum_j mu_j . R_j`` over all implicit (sub-)steps gives
``J_j^T mu_j = -dJ/dx_j - (dR_{j+1}/dx_j)^T mu_{j+1}`` with ``mu = (a, b)``
for the ``(R1, R2)`` rows.  With cost time weights ``c_k`` we set
``q = -b / c_k`` and ``p = -a / c_k``; the ``w``-row then reads ``K p = M q``
so ``-Δ_h p = q`` and ``q`` has zero mean exactly.

The multiplier of the step ending at ``t_k`` is stored at ``t_{k-1}`` (the
discrete adjoint lives on the staggered time grid), which leaves room for the
terminal condition ``q(T) = 0``.  Each step is forced by the mean of the
piecewise-linear control over the step, so the reduced gradient is
``g = beta5 u + q_c`` where the control trace ``q_c`` at ``t_k`` averages the
boundary adjoint of the two steps touching ``t_k``
(:attr:`AdjointTrajectory.control_trace`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .elliptic import neumann_inverse
from .errors import ConfigError
from .geometry import FieldPair
from .state import StateTrajectory

__all__ = [
    "Targets",
    "CostWeights",
    "AdjointSnapshot",
    "AdjointTrajectory",
    "solve_adjoint",
    "reconstruct_p",
    "adjoint_residual_continuous",
]


@dataclass(frozen=True)
class CostWeights:
    """beta_1 .. beta_5 of the tracking functional."""

    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0
    beta5: float = 0.0

    def __post_init__(self):
        betas = self.as_tuple()
        if any(b < 0 for b in betas):
            raise ConfigError(f"cost weights must be nonnegative, got {betas} (A1)", "A1")
        if all(b == 0 for b in betas):
            raise ConfigError("cost weights must not all vanish (A1)", "A1")
        if self.beta3 != 0 or self.beta4 != 0:
            raise ConfigError(
                "final-time weights beta3 and beta4 must be zero for the adjoint "
                "system used here (A6)", "A6")

    @classmethod
    def from_sequence(cls, betas) -> "CostWeights":
        betas = [float(b) for b in betas]
        if len(betas) != 5:
            raise ConfigError(f"need five cost weights, got {len(betas)}", "A1")
        return cls(*betas)

    def as_tuple(self):
        return (self.beta1, self.beta2, self.beta3, self.beta4, self.beta5)


@dataclass(frozen=True, eq=False)
class Targets:
    """Tracking targets on the space-time grids.

    ``z_omega`` and ``z_gamma`` (final-time targets) are carried along but
    unused while beta3 = beta4 = 0.
    """

    z_q: np.ndarray
    z_sigma: np.ndarray
    z_omega: np.ndarray | None = None
    z_gamma: np.ndarray | None = None

    @classmethod
    def constant(cls, model, z_q: float = 0.0, z_sigma: float = 0.0) -> "Targets":
        K = model.n_steps
        return cls(np.full((K + 1, model.grid.n_nodes), float(z_q)),
                   np.full((K + 1, model.grid.n_boundary), float(z_sigma)))

    def check(self, model):
        K = model.n_steps + 1
        if self.z_q.shape != (K, model.grid.n_nodes):
            raise ValueError(f"z_Q has shape {self.z_q.shape}")
        if self.z_sigma.shape != (K, model.grid.n_boundary):
            raise ValueError(f"z_Sigma has shape {self.z_sigma.shape}")


@dataclass(frozen=True)
class AdjointSnapshot:
    q: np.ndarray
    q_gamma: np.ndarray
    p: np.ndarray
    t: float

    @property
    def pair(self) -> FieldPair:
        return FieldPair(self.q, self.q_gamma)


@dataclass(eq=False)
class AdjointTrajectory:
    """Adjoint fields stored forward in time with ``q[-1] == 0``."""

    traj: StateTrajectory
    weights: CostWeights
    targets: Targets
    q: np.ndarray
    p: np.ndarray
    control_trace: np.ndarray
    raw: list  # (a, b, dt) per implicit sub-step, forward order

    @property
    def alpha(self) -> float:
        return self.traj.alpha

    @property
    def times(self) -> np.ndarray:
        return self.traj.times

    @property
    def q_gamma(self) -> np.ndarray:
        return self.q[:, self.traj.model.grid.boundary]

    def snapshot(self, k: int) -> AdjointSnapshot:
        return AdjointSnapshot(self.q[k], self.q_gamma[k], self.p[k], float(self.times[k]))

    def mean_q(self) -> np.ndarray:
        g = self.traj.model.grid
        return self.q @ g.mass / g.volume

    def monitors(self) -> dict:
        """Norms the uniform adjoint bound controls (sup-in-time H, l2-in-time V)."""
        g = self.traj.model.grid
        qb = self.q_gamma
        h = np.sqrt(self.q**2 @ g.mass + qb**2 @ g.boundary_mass)
        v = np.array([q @ (g.stiffness @ q) for q in self.q]) + np.array(
            [b @ (g.boundary_stiffness @ b) for b in qb])
        return {"q_h_sup": float(h.max()),
                "q_v_l2": float(np.sqrt(self.traj.dt * np.sum(v))),
                "q_sup": float(np.abs(self.q).max())}


def _micro_steps(traj: StateTrajectory):
    """Flatten sub-steps: (macro k, theta_prev, theta, dt, y_prev, y, is_last)."""
    out = []
    for k in range(1, traj.y.shape[0]):
        th_prev, y_prev = 0.0, traj.y[k - 1]
        sub = traj.micro[k - 1]
        for j, (theta, y, _w) in enumerate(sub):
            out.append((k, th_prev, theta, traj.dt * (theta - th_prev), y_prev, y,
                        j == len(sub) - 1))
            th_prev, y_prev = theta, y
    return out


def tracking_gradient(traj: StateTrajectory, weights: CostWeights, targets: Targets, k):
    """``dJ/dy_k`` of the tracking part (without the time weight)."""
    g = traj.model.grid
    out = weights.beta1 * g.mass * (traj.y[k] - targets.z_q[k])
    out[g.boundary] += weights.beta2 * g.boundary_mass * (
        traj.y[k, g.boundary] - targets.z_sigma[k])
    return out


def solve_adjoint(traj: StateTrajectory, targets: Targets,
                  weights: CostWeights) -> AdjointTrajectory:
    """Backward sweep of transposed step Jacobians at the converged states."""
    model = traj.model
    g = model.grid
    n = g.n_nodes
    targets.check(model)
    if weights.beta3 != 0 or weights.beta4 != 0:
        raise ValueError("beta3 = beta4 = 0 is required (A6)")
    alpha = traj.alpha
    c = model.time_weights
    mb = model.boundary_mass_full
    steps = _micro_steps(traj)
    K = model.n_steps

    q = np.zeros((K + 1, n))
    p = np.zeros((K + 1, n))
    ctrace = np.zeros((K + 1, g.n_boundary))
    raw = [None] * len(steps)
    a_next = b_next = np.zeros(n)
    dt_next = None
    active = weights.beta1 != 0 or weights.beta2 != 0
    for j in range(len(steps) - 1, -1, -1):
        k, th_prev, theta, dt, _y_prev, y, last = steps[j]
        rhs_y = -c[k] * tracking_gradient(traj, weights, targets, k) if last else np.zeros(n)
        if dt_next is not None:
            rhs_y += g.mass * a_next / dt_next + (g.mass + mb) * b_next / dt_next
        if active:
            lu = spla.splu(model.jacobian(y, alpha, dt))
            mu = lu.solve(np.concatenate([rhs_y, np.zeros(n)]), trans="T")
            a, b = mu[:n], mu[n:]
        else:
            a = b = np.zeros(n)
        raw[j] = (a, b, dt)
        # the sub-step is forced by (1 - mid) u_{k-1} + mid u_k
        mid = 0.5 * (th_prev + theta)
        tb = -g.boundary_mass * b[g.boundary]
        ctrace[k] += mid * tb
        ctrace[k - 1] += (1.0 - mid) * tb
        if last:
            q[k - 1] = -b / c[k]
            p[k - 1] = -a / c[k]
        a_next, b_next, dt_next = a, b, dt
    ctrace /= c[:, None] * g.boundary_mass[None, :]
    return AdjointTrajectory(traj, weights, targets, q, p, ctrace, raw)


def reconstruct_p(adjoint: AdjointTrajectory, tol: float = 1e-12) -> np.ndarray:
    """Rebuild ``p`` from ``q`` via the inverse Neumann operator plus its mean.

    The mean follows from summing the ``y``-rows of the adjoint system, the
    discrete analogue of integrating the adjoint equation over ``Omega x [t, T]``.
    """
    traj = adjoint.traj
    model = traj.model
    g = model.grid
    pot = model.potentials
    alpha = traj.alpha
    c = model.time_weights
    mb = model.boundary_mass_full
    steps = _micro_steps(traj)
    p = np.zeros_like(adjoint.p)
    ma_next = 0.0
    b_next = np.zeros(g.n_nodes)
    dt_next = None
    for j in range(len(steps) - 1, -1, -1):
        k, _, _, dt, _, y, last = steps[j]
        _, b, _ = adjoint.raw[j]
        s = -c[k] * tracking_gradient(traj, adjoint.weights, adjoint.targets, k).sum() \
            if last else 0.0
        react = g.mass * pot.bulk_second(alpha, y)
        react[g.boundary] += g.boundary_mass * pot.surface_second(alpha, y[g.boundary])
        # (1/dt) 1.M a + (1/dt) 1.mb b + 1.(react b) = s + next-step coupling
        rhs = s - (mb @ b) / dt - react @ b
        if dt_next is not None:
            rhs += (ma_next + mb @ b_next) / dt_next
        ma = dt * rhs
        zero_mean_b = b - (g.mass @ b) / g.volume
        a = neumann_inverse(g, zero_mean_b, tol=tol) + ma / g.volume
        if last:
            p[k - 1] = -a / c[k]
        ma_next, b_next, dt_next = ma, b, dt
    return p


def adjoint_residual_continuous(adjoint: AdjointTrajectory, tol: float = 1e-12):
    """Residual of the continuous zero-mean adjoint weak form on the time grid.

    Uses backward differences of ``N(q) + q`` and ``q_G`` between stored time
    levels and the state at the same time level, tested against zero-mean
    trace-compatible nodal functions.  Returns ``(per_step_max, l2_in_time)``;
    both carry the consistency error of the exact discrete adjoint.
    """
    traj = adjoint.traj
    model = traj.model
    g = model.grid
    pot = model.potentials
    alpha, dt = traj.alpha, traj.dt
    w = adjoint.weights
    z = adjoint.targets
    b = g.boundary
    mb = model.boundary_mass_full
    Nq = []
    for qk in adjoint.q:
        qk = qk - (g.mass @ qk) / g.volume
        Nq.append(neumann_inverse(g, qk, tol=tol) if np.any(qk) else np.zeros_like(qk))
    Nq = np.array(Nq)
    per_step = []
    for k in range(model.n_steps):
        q, qn = adjoint.q[k], adjoint.q[k + 1]
        y = traj.y[k]
        r = -g.mass * ((Nq[k + 1] + qn) - (Nq[k] + q)) / dt
        r += g.stiffness @ q + model.boundary_stiffness_full @ q
        r -= mb * (qn - q) / dt
        r += g.mass * pot.bulk_second(alpha, y) * q
        r[b] += g.boundary_mass * pot.surface_second(alpha, y[b]) * q[b]
        r -= w.beta1 * g.mass * (y - z.z_q[k])
        r[b] -= w.beta2 * g.boundary_mass * (y[b] - z.z_sigma[k])
        r -= g.mass * (r.sum() / g.volume)  # drop the constant-mode component
        per_step.append(float(np.max(np.abs(r) / (g.mass + mb))))
    per_step = np.array(per_step)
    return per_step, float(np.sqrt(dt * np.sum(per_step**2)))
