"""Inverse Neumann operator, the associated dual norm, and the SPD solver."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .geometry import Grid, mean_value

__all__ = ["SolverError", "solve_spd", "neumann_inverse", "dual_norm", "DIRECT_LIMIT"]

DIRECT_LIMIT = 5000


class SolverError(RuntimeError):
    """A linear or nonlinear solve did not reach its tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


def solve_spd(A, rhs, tol: float = 1e-10, max_iter: int | None = None,
              nullspace=None, weights=None, method: str = "cg"):
    """Solve ``A x = rhs`` for symmetric positive (semi)definite ``A``.

    ``nullspace`` is a single kernel vector for semidefinite systems; the
    right-hand side must then be orthogonal to it and the returned solution
    is normalised so that ``weights @ x == 0`` (plain orthogonality when
    ``weights`` is omitted).  ``method`` is ``"cg"`` (Jacobi-preconditioned
    conjugate gradients) or ``"direct"`` (dense bordered factorisation,
    limited to ``DIRECT_LIMIT`` unknowns).
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(n)

    if nullspace is not None:
        z = np.asarray(nullspace, dtype=float)
        z = z / np.linalg.norm(z)
        if abs(z @ rhs) > 1e-12 * bnorm * np.sqrt(n):
            raise SolverError(
                "inconsistent right-hand side: component along the kernel is "
                f"{z @ rhs:.3e}", residual=abs(z @ rhs),
            )
        rhs = rhs - (z @ rhs) * z
        w = z if weights is None else np.asarray(weights, dtype=float)

    if method == "direct":
        if n > DIRECT_LIMIT:
            raise ValueError(f"direct path limited to {DIRECT_LIMIT} unknowns")
        Ad = A.toarray() if sps.issparse(A) else np.asarray(A, dtype=float)
        if nullspace is None:
            x = sla.solve(Ad, rhs, assume_a="pos")
        else:
            B = np.zeros((n + 1, n + 1))
            B[:n, :n] = Ad
            B[:n, n] = B[n, :n] = w
            x = sla.solve(B, np.append(rhs, 0.0))[:n]
    elif method == "cg":
        diag = A.diagonal() if sps.issparse(A) else np.diag(A)
        precond = spla.LinearOperator((n, n), matvec=lambda r: r / diag, dtype=float)
        x, info = spla.cg(A, rhs, rtol=0.1 * tol, atol=0.0,
                          maxiter=max_iter or 10 * n, M=precond)
        if nullspace is not None:
            x = x - (w @ x) / (w @ z) * z
    else:
        raise ValueError(f"unknown method {method!r}")

    res = np.linalg.norm(A @ x - rhs) / bnorm
    if not res <= tol:
        raise SolverError(f"linear solve stalled at relative residual {res:.3e}",
                          residual=res)
    return x


def neumann_inverse(grid: Grid, v, tol: float = 1e-10, method: str = "cg",
                    max_iter: int | None = None) -> np.ndarray:
    """Zero-mean solution ``u`` of ``-Δ_h u = v`` with zero flux.

    Raises ``ValueError`` when ``v`` does not have zero mean, since the
    Neumann problem is then unsolvable.
    """
    v = grid.check_bulk(v)
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    if abs(mean_value(grid, v)) > 1e-10 * scale:
        raise ValueError(
            f"neumann_inverse needs zero-mean data, mean is {mean_value(grid, v):.3e}"
        )
    rhs = grid.mass * v
    rhs -= grid.mass * (rhs.sum() / grid.volume)
    return solve_spd(grid.stiffness, rhs, tol=tol, max_iter=max_iter,
                     nullspace=np.ones(grid.n_nodes), weights=grid.mass,
                     method=method)


def dual_norm(grid: Grid, v, tol: float = 1e-10) -> float:
    v = grid.check_bulk(v)
    m = mean_value(grid, v)
    u = neumann_inverse(grid, v - m, tol=tol)
    return float(np.sqrt(max(u @ (grid.stiffness @ u), 0.0) + m * m))
