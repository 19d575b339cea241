"""Sparse kernels and solvers for the saddle-point and auxiliary systems.

Matrices are scipy CSR with canonical storage (sorted column indices,
no explicit zeros).  The Krylov solvers are written here because their
contracts are specific: GMRES stops on the preconditioned residual
reduced by the configured factor, reports the true residual alongside,
and reorthogonalizes when modified Gram-Schmidt loses orthogonality;
CG refuses operators that show negative curvature.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from ._kernels import ilu0_factor, ilu0_solve


class DimensionMismatchError(ValueError):
    pass


class SingularMatrixError(RuntimeError):
    pass


class PreconditionerBreakdownError(RuntimeError):
    """ILU(0) hit a zero pivot."""


class NotSymmetricPositiveDefiniteError(RuntimeError):
    """CG observed nonpositive curvature."""


@dataclass
class SolveReport:
    iterations: int
    achieved_relative_residual: float
    converged: bool
    wall_time: float
    true_relative_residual: float = float("nan")
    method: str = ""


def canonical_csr(mat, drop_below=1e-300):
    """CSR with sorted indices, summed duplicates, tiny entries dropped."""
    out = sp.csr_matrix(mat)
    out.sum_duplicates()
    out.sort_indices()
    out.data[np.abs(out.data) < drop_below] = 0.0
    out.eliminate_zeros()
    return out


def spmv(mat, x):
    """y = mat @ x with an explicit dimension check."""
    x = np.asarray(x)
    if mat.shape[1] != x.shape[0]:
        raise DimensionMismatchError(f"matrix is {mat.shape}, vector has {x.shape[0]}")
    return mat @ x


def spmv_transpose(mat, x):
    """y = mat.T @ x with an explicit dimension check."""
    x = np.asarray(x)
    if mat.shape[0] != x.shape[0]:
        raise DimensionMismatchError(f"matrix is {mat.shape}, vector has {x.shape[0]}")
    return mat.T @ x


@dataclass
class BlockSaddle:
    """The symmetric indefinite block [[A/rho, B], [B^T, -M]]."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        my, mx = self.B.shape
        if self.A.shape != (my, my) or self.M.shape != (mx, mx):
            raise DimensionMismatchError(
                f"incompatible blocks: A {self.A.shape}, B {self.B.shape}, M {self.M.shape}"
            )

    @property
    def shape(self):
        n = self.A.shape[0] + self.M.shape[0]
        return (n, n)

    def assemble(self):
        """Single CSR in [p; u] ordering."""
        return canonical_csr(
            sp.bmat(
                [[self.A / self.rho, self.B], [self.B.T, -self.M]],
                format="csr",
            )
        )


class ILU0Factor:
    """Zero-fill incomplete LU on the matrix's own sparsity pattern."""

    def __init__(self, indptr, indices, data, diag_pos, shape):
        self.indptr = indptr
        self.indices = indices
        self.data = data
        self.diag_pos = diag_pos
        self.shape = shape

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise DimensionMismatchError(
                f"factor is {self.shape}, vector has {rhs.shape[0]}"
            )
        out = np.empty_like(rhs)
        ilu0_solve(self.indptr, self.indices, self.data, self.diag_pos, rhs, out)
        return out


def ilu0(mat):
    """ILU(0) factorization of a square CSR matrix.

    Raises PreconditionerBreakdownError on a zero pivot; the diagonal
    must be structurally present.
    """
    mat = canonical_csr(mat)
    n = mat.shape[0]
    if mat.shape[0] != mat.shape[1]:
        raise DimensionMismatchError("ILU(0) needs a square matrix")
    diag_pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        lo, hi = mat.indptr[i], mat.indptr[i + 1]
        j = np.searchsorted(mat.indices[lo:hi], i)
        if j < hi - lo and mat.indices[lo + j] == i:
            diag_pos[i] = lo + j
    if np.any(diag_pos < 0):
        raise PreconditionerBreakdownError("matrix has structurally empty diagonal")
    data = mat.data.copy()
    bad = ilu0_factor(n, mat.indptr, mat.indices, data, diag_pos)
    if bad >= 0:
        raise PreconditionerBreakdownError(f"zero pivot in row {bad}")
    return ILU0Factor(mat.indptr, mat.indices, data, diag_pos, mat.shape)


def _as_operator(op):
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda x: op @ x, op.shape[0]
    return op, None


def gmres(operator, rhs, preconditioner=None, tol=1e-8, restart=100,
          maxit=10000, x0=None):
    """Restarted GMRES with left preconditioning.

    Stops when the preconditioned residual norm drops below tol times
    the initial preconditioned residual norm.  Uses modified
    Gram-Schmidt with one reorthogonalization pass whenever the
    remaining mass of the new Krylov vector exceeds 1e-8 of its input
    norm after the first pass.
    """
    t0 = time.perf_counter()
    apply_op, n = _as_operator(operator)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0] if n is None else n
    if rhs.shape[0] != n:
        raise DimensionMismatchError("rhs size does not match operator")
    psolve = preconditioner.solve if preconditioner is not None else (lambda r: r)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0 and x0 is None:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t0, 0.0, "gmres")

    beta0 = None
    total_it = 0
    converged = False
    while True:
        r = psolve(rhs - apply_op(x))
        beta = float(np.linalg.norm(r))
        if beta0 is None:
            beta0 = beta
        if beta0 == 0.0 or beta <= tol * beta0:
            converged = True
            break
        if total_it >= maxit:
            break
        v = [r / beta]
        dim = min(restart, maxit - total_it)
        h = np.zeros((dim + 1, dim))
        cs = np.zeros(dim)
        sn = np.zeros(dim)
        g = np.zeros(dim + 1)
        g[0] = beta
        j = 0
        while j < dim:
            w = psolve(apply_op(v[j]))
            norm_w0 = float(np.linalg.norm(w))
            for i in range(j + 1):
                h[i, j] = float(v[i] @ w)
                w -= h[i, j] * v[i]
            if float(np.linalg.norm(w)) > 1e-8 * max(norm_w0, 1e-300):
                for i in range(j + 1):
                    c = float(v[i] @ w)
                    h[i, j] += c
                    w -= c * v[i]
            hn = float(np.linalg.norm(w))
            h[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = t
            denom = math_hypot(h[j, j], h[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = h[j, j] / denom, h[j + 1, j] / denom
            h[j, j] = cs[j] * h[j, j] + sn[j] * h[j + 1, j]
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total_it += 1
            resid_est = abs(g[j + 1])
            j += 1
            if resid_est <= tol * beta0 or total_it >= maxit or hn == 0.0:
                break  # converged, budget exhausted, or happy breakdown
            if j < dim:
                v.append(w / hn)
        y = _solve_upper(h[:j, :j], g[:j])
        for i in range(j):
            x += y[i] * v[i]

    r_prec = psolve(rhs - apply_op(x))
    achieved = float(np.linalg.norm(r_prec)) / beta0 if beta0 > 0 else 0.0
    true_rel = (
        float(np.linalg.norm(rhs - apply_op(x))) / rhs_norm if rhs_norm > 0 else 0.0
    )
    report = SolveReport(
        iterations=total_it,
        achieved_relative_residual=achieved,
        converged=converged and achieved <= tol,
        wall_time=time.perf_counter() - t0,
        true_relative_residual=true_rel,
        method="gmres",
    )
    return x, report


def math_hypot(a, b):
    return float(np.hypot(a, b))


def _solve_upper(r, g):
    j = len(g)
    y = np.zeros(j)
    for i in range(j - 1, -1, -1):
        if r[i, i] == 0.0:
            y[i] = 0.0
            continue
        y[i] = (g[i] - r[i, i + 1:] @ y[i + 1:]) / r[i, i]
    return y


def cg(operator, rhs, tol=1e-8, maxit=10000):
    """Conjugate gradients for symmetric positive definite operators.

    Raises NotSymmetricPositiveDefiniteError when a search direction
    shows nonpositive curvature.
    """
    t0 = time.perf_counter()
    apply_op, n = _as_operator(operator)
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros(rhs.shape[0])
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t0, 0.0, "cg")
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    it = 0
    while it < maxit:
        if np.sqrt(rr) <= tol * rhs_norm:
            break
        ap = apply_op(p)
        curv = float(p @ ap)
        if curv <= 0.0:
            raise NotSymmetricPositiveDefiniteError(
                f"nonpositive curvature {curv} at iteration {it}"
            )
        alpha = rr / curv
        x += alpha * p
        r -= alpha * ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    achieved = float(np.linalg.norm(rhs - apply_op(x))) / rhs_norm
    return x, SolveReport(
        iterations=it,
        achieved_relative_residual=achieved,
        converged=achieved <= tol * 1.001 or np.sqrt(rr) <= tol * rhs_norm,
        wall_time=time.perf_counter() - t0,
        true_relative_residual=achieved,
        method="cg",
    )


def dense_lu_solve(mat, rhs):
    """Partial-pivoted dense solve, the small-system oracle.

    Accepts sparse or dense input up to dimension 5000.
    """
    if sp.issparse(mat):
        mat = mat.toarray()
    mat = np.asarray(mat, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if mat.shape[0] != mat.shape[1] or mat.shape[0] != rhs.shape[0]:
        raise DimensionMismatchError(f"bad shapes {mat.shape}, {rhs.shape}")
    if mat.shape[0] > 5000:
        raise ValueError("dense oracle limited to dimension 5000")
    try:
        x = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return x


def solve_saddle_gmres_ilu0(block, rhs, tol=1e-8, restart=100, maxit=10000):
    """Assemble the block system, factor ILU(0), run GMRES.

    On preconditioner breakdown falls back to unpreconditioned GMRES
    with a warning.
    """
    mat = block.assemble()
    try:
        prec = ilu0(mat)
    except PreconditionerBreakdownError as exc:
        warnings.warn(
            f"ILU(0) breakdown ({exc}); falling back to unpreconditioned GMRES",
            RuntimeWarning,
        )
        prec = None
    return gmres(mat, rhs, preconditioner=prec, tol=tol, restart=restart,
                 maxit=maxit)


def write_matrix_market(path, obj):
    """Dump a matrix or vector in MatrixMarket coordinate/array format."""
    obj = np.asarray(obj) if not sp.issparse(obj) else obj
    if not sp.issparse(obj) and obj.ndim == 1:
        obj = obj.reshape(-1, 1)
    scipy.io.mmwrite(str(path), obj)


def read_matrix_market(path):
    obj = scipy.io.mmread(str(path))
    if sp.issparse(obj):
        return canonical_csr(obj)
    arr = np.asarray(obj)
    if arr.ndim == 2 and arr.shape[1] == 1:
        return arr[:, 0]
    return arr
