import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chquench.geometry import (
    FieldPair,
    apply_laplace_beltrami,
    apply_laplacian,
    boundary_integrate,
    build_grid,
    integrate,
    mean_value,
    normal_derivative,
)


def test_build_grid_1d_layout():
    g = build_grid(1, 8, 2.0)
    assert g.n_nodes == 9
    assert g.boundary.tolist() == [0, 8]
    assert g.volume == pytest.approx(2.0)
    # 1D boundary uses the counting measure
    assert g.boundary_measure == 2.0


def test_build_grid_2d_chain_is_closed_loop(grid2d):
    g = grid2d
    assert g.n_boundary == 2 * (8 + 6)
    assert len(set(g.boundary.tolist())) == g.n_boundary
    pts = g.coords[g.boundary]
    steps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    np.testing.assert_allclose(steps, g.segments)
    assert g.boundary_measure == pytest.approx(2 * (1.0 + 0.75))
    assert g.volume == pytest.approx(0.75)
    # counter-clockwise: positive signed area
    x, y = pts[:, 0], pts[:, 1]
    assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) == pytest.approx(0.75)


@pytest.mark.parametrize("args", [(3, 8, 1.0), (1, 3, 1.0), (1, 8, 0.0), (2, (8,), (1.0,))])
def test_build_grid_rejects_bad_input(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_laplacian_exact_on_quadratics():
    g = build_grid(1, 16, 1.0)
    x = g.coords[:, 0]
    # x^2 has outward flux 0 at x=0 and 2 at x=1
    lap = apply_laplacian(g, x**2, flux=np.array([0.0, 2.0]))
    np.testing.assert_allclose(lap, 2.0, atol=1e-10)


def test_laplacian_second_order_convergence():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(1, n, 1.0)
        x = g.coords[:, 0]
        errs.append(np.max(np.abs(apply_laplacian(g, np.cos(np.pi * x))
                                  + np.pi**2 * np.cos(np.pi * x))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_laplacian_2d_separable():
    errs = []
    for n in (8, 16, 32):
        g = build_grid(2, (n, n), (1.0, 1.0))
        x, y = g.coords.T
        u = np.cos(np.pi * x) * np.cos(2 * np.pi * y)
        errs.append(np.max(np.abs(apply_laplacian(g, u) + 5 * np.pi**2 * u)))
    assert errs[2] < errs[1] / 3.5 < errs[0] / 12


def test_laplace_beltrami_on_perimeter():
    # sin of the normalised arclength is an eigenfunction on the closed loop
    g = build_grid(2, (16, 16), (1.0, 1.0))
    s = np.concatenate([[0.0], np.cumsum(g.segments)[:-1]])
    P = g.boundary_measure
    v = np.sin(2 * np.pi * s / P)
    lb = apply_laplace_beltrami(g, v)
    np.testing.assert_allclose(lb, -(2 * np.pi / P) ** 2 * v, atol=2e-2)
    assert np.all(apply_laplace_beltrami(build_grid(1, 8, 1.0), np.ones(2)) == 0)


def test_normal_derivative_quadratic():
    g = build_grid(1, 10, 1.0)
    x = g.coords[:, 0]
    np.testing.assert_allclose(normal_derivative(g, x**2 - x), [1.0, 1.0], atol=1e-12)


def test_normal_derivative_2d_edges():
    g = build_grid(2, (8, 8), (1.0, 1.0))
    x, y = g.coords.T
    dn = normal_derivative(g, x**2)
    bx = g.coords[g.boundary, 0]
    by = g.coords[g.boundary, 1]
    right = np.isclose(bx, 1.0) & ~np.isclose(by, 0.0) & ~np.isclose(by, 1.0)
    np.testing.assert_allclose(dn[right], 2.0, atol=1e-12)
    bottom = np.isclose(by, 0.0) & ~np.isclose(bx, 0.0) & ~np.isclose(bx, 1.0)
    np.testing.assert_allclose(dn[bottom], 0.0, atol=1e-12)


def test_quadrature():
    g = build_grid(2, (10, 5), (2.0, 1.0))
    x, y = g.coords.T
    assert integrate(g, x) == pytest.approx(2.0)
    assert mean_value(g, 3 + 0 * x) == pytest.approx(3.0)
    assert boundary_integrate(g, np.ones(g.n_boundary)) == pytest.approx(6.0)


def test_field_pair_compatibility():
    g = build_grid(1, 8, 1.0)
    y = np.linspace(-0.5, 0.5, 9)
    pair = FieldPair.from_bulk(g, y)
    assert pair.is_compatible(g)
    assert not FieldPair(y, np.zeros(2)).is_compatible(g)
    with pytest.raises(ValueError):
        g.check_bulk(np.zeros(4))


@given(arrays(float, 9, elements=st.floats(-10, 10)), arrays(float, 9, elements=st.floats(-10, 10)))
def test_stiffness_symmetric_semidefinite(u, v):
    K = build_grid(1, 8, 1.0).stiffness
    assert u @ (K @ v) == pytest.approx(v @ (K @ u), abs=1e-9)
    assert u @ (K @ u) >= -1e-9


def test_stiffness_kills_constants(grid2d):
    assert np.max(np.abs(grid2d.stiffness @ np.ones(grid2d.n_nodes))) < 1e-12
    assert np.max(np.abs(grid2d.boundary_stiffness @ np.ones(grid2d.n_boundary))) < 1e-12
