"""Numba kernels for the ILU(0) factorization and triangular solves."""

import numpy as np
from numba import njit


@njit(cache=True)
def ilu0_factor(n, indptr, indices, data, diag_pos):
    """In-place ILU(0) on CSR arrays with sorted column indices.

    Returns -1 on success, or the row index of the first zero pivot.
    L is unit lower triangular (stored without its diagonal), U upper
    triangular including the diagonal; both live on the original
    sparsity pattern.
    """
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        a, b = indptr[i], indptr[i + 1]
        for jj in range(a, b):
            pos[indices[jj]] = jj
        for jj in range(a, b):
            k = indices[jj]
            if k >= i:
                break
            dk = data[diag_pos[k]]
            if dk == 0.0:
                return k
            lik = data[jj] / dk
            data[jj] = lik
            for kk in range(diag_pos[k] + 1, indptr[k + 1]):
                p = pos[indices[kk]]
                if p >= 0:
                    data[p] -= lik * data[kk]
        if data[diag_pos[i]] == 0.0:
            return i
        for jj in range(a, b):
            pos[indices[jj]] = -1
    return -1


@njit(cache=True)
def ilu0_solve(indptr, indices, data, diag_pos, rhs, out):
    """Forward/backward substitution with the packed ILU(0) factors."""
    n = len(rhs)
    for i in range(n):
        s = rhs[i]
        for jj in range(indptr[i], diag_pos[i]):
            s -= data[jj] * out[indices[jj]]
        out[i] = s
    for i in range(n - 1, -1, -1):
        s = out[i]
        for jj in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= data[jj] * out[indices[jj]]
        out[i] = s / data[diag_pos[i]]
