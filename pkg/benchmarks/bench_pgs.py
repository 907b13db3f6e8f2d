"""Compare the compiled and pure-Python projected Gauss-Seidel kernels.

Run with ``python3 benchmarks/bench_pgs.py``.  Both kernels solve the same
obstacle-type system; the script reports wall time per call and checks that
the solutions agree to rounding.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sps

from chquench import _pgs_py
from chquench.geometry import build_grid

try:
    from chquench import _pgs
except ImportError:
    _pgs = None


def make_problem(cells, dt=0.005, seed=0):
    g = build_grid(1, cells, 1.0)
    A = (sps.diags(g.mass / dt - g.mass) + g.stiffness).tocsr()
    A.sort_indices()
    rng = np.random.default_rng(seed)
    rhs = A @ np.clip(1.2 * np.cos(np.pi * g.coords[:, 0]), -1, 1) \
        + 0.1 * rng.standard_normal(g.n_nodes)
    n = g.n_nodes
    return (A.indptr.astype(np.int32), A.indices.astype(np.int32), A.data.copy(), rhs,
            -np.ones(n), np.ones(n))


def bench(kernel, problem, sweeps, repeat):
    indptr, indices, data, rhs, lo, hi = problem
    best, y = np.inf, None
    for _ in range(repeat):
        y = np.zeros(rhs.shape[0])
        t0 = time.perf_counter()
        kernel(indptr, indices, data, rhs, y, lo, hi, sweeps, 0.0)
        best = min(best, time.perf_counter() - t0)
    return best, y


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--sweeps", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'nodes':>6} {'python [s]':>12} {'cython [s]':>12} {'speedup':>8} {'max diff':>10}")
    for cells in args.cells:
        prob = make_problem(cells)
        t_py, y_py = bench(_pgs_py.pgs_sweeps, prob, args.sweeps, args.repeat)
        if _pgs is None:
            print(f"{cells + 1:>6} {t_py:12.4f} {'n/a':>12}")
            continue
        t_cy, y_cy = bench(_pgs.pgs_sweeps, prob, args.sweeps, args.repeat)
        print(f"{cells + 1:>6} {t_py:12.4f} {t_cy:12.6f} {t_py / t_cy:8.0f} "
              f"{np.max(np.abs(y_py - y_cy)):10.1e}")


if __name__ == "__main__":
    main()
