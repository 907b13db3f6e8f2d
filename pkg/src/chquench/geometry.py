"""Tensor-grid domains with an explicit boundary chain.

All operators use lumped (trapezoidal) mass weights ``M`` and a symmetric
stiffness matrix ``K`` so that the discrete Laplacian is ``-M^{-1} K``.  With
this choice the zero-flux stencil coincides with the classical ghost-node
mirror, and Neumann flux data enters through the boundary arclength weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps

__all__ = [
    "Grid",
    "FieldPair",
    "build_grid",
    "apply_laplacian",
    "apply_laplace_beltrami",
    "normal_derivative",
    "mean_value",
    "integrate",
    "boundary_integrate",
]


def _stiffness_1d(n: int, h: float) -> sps.csr_matrix:
    main = np.full(n + 1, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    off = np.full(n, -1.0 / h)
    return sps.diags([off, main, off], [-1, 0, 1], format="csr")


def _weights_1d(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on ``[0, L_1] x ... x [0, L_dim]``.

    Nodes are numbered with the x-index running fastest.  ``boundary`` lists
    the bulk node index of every boundary-chain node: the two endpoints in 1D,
    a counter-clockwise closed loop starting at the origin in 2D.
    """

    dim: int
    cells: tuple[int, ...]
    lengths: tuple[float, ...]
    coords: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    boundary_mass: np.ndarray = field(repr=False)
    segments: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary.shape[0]

    @property
    def volume(self) -> float:
        return float(self.mass.sum())

    @property
    def boundary_measure(self) -> float:
        return float(self.boundary_mass.sum())

    @cached_property
    def stiffness(self) -> sps.csr_matrix:
        """Symmetric Dirichlet-form matrix: ``u @ K @ v ~ (grad u, grad v)``."""
        if self.dim == 1:
            return _stiffness_1d(self.cells[0], self.spacing[0])
        (nx, ny), (hx, hy) = self.cells, self.spacing
        Kx, Ky = _stiffness_1d(nx, hx), _stiffness_1d(ny, hy)
        Wx, Wy = sps.diags(_weights_1d(nx, hx)), sps.diags(_weights_1d(ny, hy))
        return (sps.kron(Wy, Kx) + sps.kron(Ky, Wx)).tocsr()

    @cached_property
    def boundary_stiffness(self) -> sps.csr_matrix:
        """Tangential Dirichlet form on the boundary chain (zero in 1D)."""
        nb = self.n_boundary
        if self.dim == 1:
            return sps.csr_matrix((nb, nb))
        inv = 1.0 / self.segments
        nxt = np.roll(np.arange(nb), -1)
        rows = np.concatenate([np.arange(nb), nxt, np.arange(nb), nxt])
        cols = np.concatenate([nxt, np.arange(nb), np.arange(nb), nxt])
        vals = np.concatenate([-inv, -inv, inv, inv])
        return sps.csr_matrix((vals, (rows, cols)), shape=(nb, nb))

    @cached_property
    def trace(self) -> sps.csr_matrix:
        """Restriction ``P`` from bulk nodes to the boundary chain."""
        nb = self.n_boundary
        return sps.csr_matrix(
            (np.ones(nb), (np.arange(nb), self.boundary)), shape=(nb, self.n_nodes)
        )

    def restrict(self, bulk: np.ndarray) -> np.ndarray:
        return np.asarray(bulk)[..., self.boundary]

    def check_bulk(self, values, name: str = "field") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise ValueError(
                f"{name} has shape {values.shape}, expected ({self.n_nodes},)"
            )
        return values

    def check_boundary(self, values, name: str = "trace") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_boundary,):
            raise ValueError(
                f"{name} has shape {values.shape}, expected ({self.n_boundary},)"
            )
        return values


@dataclass(frozen=True)
class FieldPair:
    """A bulk field together with a field on the boundary chain.

    The plain constructor accepts any pair (dual objects need not be
    compatible); :meth:`from_bulk` builds an element of the trace-compatible
    space by restriction.
    """

    bulk: np.ndarray
    trace: np.ndarray

    @classmethod
    def from_bulk(cls, grid: Grid, bulk) -> "FieldPair":
        bulk = grid.check_bulk(bulk).copy()
        return cls(bulk, grid.restrict(bulk).copy())

    def is_compatible(self, grid: Grid, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(grid.restrict(self.bulk) - self.trace) <= atol))


def build_grid(dim: int, cells, lengths) -> Grid:
    """Build a 1D interval or 2D rectangle grid.

    >>> build_grid(1, 8, 1.0).boundary.tolist()
    [0, 8]
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim!r}")
    cells = tuple(int(c) for c in np.atleast_1d(cells))
    lengths = tuple(float(L) for L in np.atleast_1d(lengths))
    if len(cells) != dim or len(lengths) != dim:
        raise ValueError(f"need {dim} cell counts and lengths, got {cells}, {lengths}")
    if min(cells) < 4:
        raise ValueError(f"at least 4 cells per axis are required, got {cells}")
    if min(lengths) <= 0:
        raise ValueError(f"lengths must be positive, got {lengths}")

    if dim == 1:
        (n,), (L,) = cells, lengths
        h = L / n
        coords = np.linspace(0.0, L, n + 1)[:, None]
        boundary = np.array([0, n])
        mass = _weights_1d(n, h)
        boundary_mass = np.ones(2)
        segments = np.zeros(0)
    else:
        (nx, ny), (Lx, Ly) = cells, lengths
        hx, hy = Lx / nx, Ly / ny
        X, Y = np.meshgrid(np.linspace(0, Lx, nx + 1), np.linspace(0, Ly, ny + 1))
        coords = np.column_stack([X.ravel(), Y.ravel()])
        idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
        chain = (
            [idx(i, 0) for i in range(nx)]
            + [idx(nx, j) for j in range(ny)]
            + [idx(i, ny) for i in range(nx, 0, -1)]
            + [idx(0, j) for j in range(ny, 0, -1)]
        )
        boundary = np.array(chain)
        segments = np.concatenate(
            [np.full(nx, hx), np.full(ny, hy), np.full(nx, hx), np.full(ny, hy)]
        )
        boundary_mass = 0.5 * (segments + np.roll(segments, 1))
        mass = np.outer(_weights_1d(ny, hy), _weights_1d(nx, hx)).ravel()

    return Grid(
        dim=dim,
        cells=cells,
        lengths=lengths,
        coords=coords,
        boundary=boundary,
        mass=mass,
        boundary_mass=boundary_mass,
        segments=segments,
    )


def apply_laplacian(grid: Grid, field, flux=None) -> np.ndarray:
    """Second-order discrete Laplacian with outward normal-derivative data.

    ``flux`` (one value per boundary-chain node) replaces the mirrored ghost
    value; ``None`` means zero flux.
    """
    field = grid.check_bulk(field)
    out = -(grid.stiffness @ field)
    if flux is not None:
        flux = grid.check_boundary(flux, "flux")
        np.add.at(out, grid.boundary, grid.boundary_mass * flux)
    return out / grid.mass


def apply_laplace_beltrami(grid: Grid, trace) -> np.ndarray:
    trace = grid.check_boundary(trace)
    if grid.dim == 1:
        return np.zeros_like(trace)
    return -(grid.boundary_stiffness @ trace) / grid.boundary_mass


def _one_sided(u0, u1, u2, h):
    # outward derivative at u0 looking inward through u1, u2
    return (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h)


def normal_derivative(grid: Grid, field) -> np.ndarray:
    """One-sided second-order outward normal derivative on the boundary chain.

    At 2D corners the normal is undefined; the mean of the two axis-aligned
    outward derivatives is returned there.
    """
    u = grid.check_bulk(field)
    if grid.dim == 1:
        (h,) = grid.spacing
        return np.array([_one_sided(u[0], u[1], u[2], h),
                         _one_sided(u[-1], u[-2], u[-3], h)])

    (nx, ny), (hx, hy) = grid.cells, grid.spacing
    U = u.reshape(ny + 1, nx + 1)
    dx = np.zeros_like(U)  # outward x-derivative on left/right columns
    dy = np.zeros_like(U)
    dx[:, 0] = _one_sided(U[:, 0], U[:, 1], U[:, 2], hx)
    dx[:, -1] = _one_sided(U[:, -1], U[:, -2], U[:, -3], hx)
    dy[0, :] = _one_sided(U[0, :], U[1, :], U[2, :], hy)
    dy[-1, :] = _one_sided(U[-1, :], U[-2, :], U[-3, :], hy)
    on_x = np.zeros(U.shape, bool)
    on_y = np.zeros(U.shape, bool)
    on_x[:, [0, -1]] = True
    on_y[[0, -1], :] = True
    count = on_x.astype(float) + on_y.astype(float)
    dn = (dx + dy).ravel() / np.maximum(count.ravel(), 1.0)
    return dn[grid.boundary]


def integrate(grid: Grid, field) -> float:
    return float(grid.mass @ grid.check_bulk(field))


def mean_value(grid: Grid, field) -> float:
    return integrate(grid, field) / grid.volume


def boundary_integrate(grid: Grid, trace) -> float:
    """Arclength quadrature in 2D, counting measure over the endpoints in 1D."""
    return float(grid.boundary_mass @ grid.check_boundary(trace))
