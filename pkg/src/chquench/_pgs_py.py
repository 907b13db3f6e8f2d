"""Pure-Python projected Gauss-Seidel, used when the compiled kernel is absent."""

import numpy as np


def pgs_sweeps(indptr, indices, data, rhs, y, lo, hi, max_sweeps, tol):
    """Lexicographic projected Gauss-Seidel for ``A y = rhs`` with ``lo <= y <= hi``.

    Updates ``y`` in place and returns ``(sweeps, max_change_of_last_sweep)``.
    """
    n = y.shape[0]
    # plain lists are much faster than numpy scalars in this loop
    ptr, idx, val = indptr.tolist(), indices.tolist(), data.tolist()
    b, lo_, hi_ = rhs.tolist(), lo.tolist(), hi.tolist()
    x = y.tolist()
    sweep, change = 0, 0.0
    while sweep < max_sweeps:
        sweep += 1
        change = 0.0
        for i in range(n):
            s = b[i]
            diag = 0.0
            for jj in range(ptr[i], ptr[i + 1]):
                j = idx[jj]
                if j == i:
                    diag = val[jj]
                else:
                    s -= val[jj] * x[j]
            if diag <= 0.0:
                raise ZeroDivisionError(f"nonpositive diagonal in row {i}")
            new = s / diag
            if new < lo_[i]:
                new = lo_[i]
            elif new > hi_[i]:
                new = hi_[i]
            d = abs(new - x[i])
            if d > change:
                change = d
            x[i] = new
        if change <= tol:
            break
    y[:] = np.asarray(x)
    return sweep, change
