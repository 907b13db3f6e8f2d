# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Projected Gauss-Seidel sweeps on a CSR matrix (compiled kernel)."""

from libc.math cimport fabs


def pgs_sweeps(const int[::1] indptr, const int[::1] indices, const double[::1] data,
               const double[::1] rhs, double[::1] y, const double[::1] lo,
               const double[::1] hi, int max_sweeps, double tol):
    """Lexicographic projected Gauss-Seidel for ``A y = rhs`` with ``lo <= y <= hi``.

    Updates ``y`` in place and returns ``(sweeps, max_change_of_last_sweep)``.
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, jj
    cdef int sweep = 0
    cdef double s, diag, new, change = 0.0, d
    while sweep < max_sweeps:
        sweep += 1
        change = 0.0
        for i in range(n):
            s = rhs[i]
            diag = 0.0
            for jj in range(indptr[i], indptr[i + 1]):
                if indices[jj] == i:
                    diag = data[jj]
                else:
                    s -= data[jj] * y[indices[jj]]
            if diag <= 0.0:
                raise ZeroDivisionError(f"nonpositive diagonal in row {i}")
            new = s / diag
            if new < lo[i]:
                new = lo[i]
            elif new > hi[i]:
                new = hi[i]
            d = fabs(new - y[i])
            if d > change:
                change = d
            y[i] = new
        if change <= tol:
            break
    return sweep, change
