"""Discrete reduced optimality system for the tracking control problem.

Minimizing the tracking functional with the energy penalty on the
forcing leads, after eliminating the control, to the symmetric
indefinite block system in the adjoint p and state u:

    [ A/rho  B ] [p]   [ 0]
    [ B^T   -M ] [u] = [-f]

The default solver is ILU(0)-preconditioned GMRES on this block system;
an equivalent nested Schur path solves (rho B^T A^{-1} B + M) u = f by
CG with inner CG solves for A, and is kept as a cross-check.  The
control is recovered as z = -A p / rho, stored both as that dual (load)
vector and as a nodal field through a mass-matrix Riesz lift.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import assembly, dofmap, linalg


@dataclass
class OcpProblem:
    mesh: object
    rho: float
    target: object
    dof_X: dofmap.DofMap
    dof_Y: dofmap.DofMap
    ops: assembly.AssembledOperators

    @property
    def block(self):
        return linalg.BlockSaddle(self.ops.A, self.ops.B, self.ops.M, self.rho)

    def with_rho(self, rho):
        """Same mesh, matrices and load under a different penalty weight."""
        return OcpProblem(self.mesh, rho, self.target, self.dof_X, self.dof_Y,
                          self.ops)


@dataclass
class OcpSolution:
    u: np.ndarray
    p: np.ndarray
    z_dual: np.ndarray
    z_nodal: np.ndarray
    report: linalg.SolveReport
    block_residual: float

    @property
    def converged(self):
        return self.report.converged


def build_problem(mesh, rho, target, load_depth=4):
    """Assemble operators and load; right-hand side is (0; -f)."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    dof_X = dofmap.build_dofmap(mesh, "X")
    dof_Y = dofmap.build_dofmap(mesh, "Y")
    ops = assembly.assemble_operators(mesh, target, dof_X, dof_Y,
                                      load_depth=load_depth)
    return OcpProblem(mesh=mesh, rho=rho, target=target, dof_X=dof_X,
                      dof_Y=dof_Y, ops=ops)


def solve(problem, method="saddle_gmres_ilu0", tol=1e-8, restart=100,
          maxit=10000):
    """Solve for state, adjoint and control.

    Non-convergence is reported, not raised; the partial solution is
    returned with converged=False.
    """
    my = problem.ops.A.shape[0]
    mx = problem.ops.M.shape[0]
    f = problem.ops.f
    if method == "saddle_gmres_ilu0":
        rhs = np.concatenate([np.zeros(my), -f])
        x, report = linalg.solve_saddle_gmres_ilu0(
            problem.block, rhs, tol=tol, restart=restart, maxit=maxit)
        p, u = x[:my], x[my:]
    elif method == "schur_cg":
        A, B, M = problem.ops.A, problem.ops.B, problem.ops.M
        rho = problem.rho
        inner_its = [0]

        def schur_apply(u_vec):
            bu = B @ u_vec
            pw, rep = linalg.cg(A, bu, tol=1e-10)
            inner_its[0] += rep.iterations
            return rho * (B.T @ pw) + M @ u_vec

        u, report = linalg.cg(schur_apply, f, tol=tol, maxit=maxit)
        report.method = "schur_cg"
        pa, _ = linalg.cg(A, B @ u, tol=1e-10)
        p = -rho * pa
    else:
        raise ValueError(f"unknown solve method {method!r}")

    z_dual = -(problem.ops.A @ p) / problem.rho
    m_y = _mass_on_Y(problem)
    z_nodal, _ = linalg.cg(m_y, z_dual, tol=1e-12, maxit=10000)

    block_res = _block_residual(problem, u, p)
    return OcpSolution(u=u, p=p, z_dual=z_dual, z_nodal=z_nodal,
                       report=report, block_residual=block_res)


def _mass_on_Y(problem):
    cache = getattr(problem, "_m_y_cache", None)
    if cache is None:
        cache = assembly.assemble_M(problem.mesh, problem.dof_Y)
        problem.__dict__["_m_y_cache"] = cache
    return cache


def _block_residual(problem, u, p):
    """Relative residual of the full block system at (p, u)."""
    A, B, M, f = problem.ops.A, problem.ops.B, problem.ops.M, problem.ops.f
    r1 = A @ p / problem.rho + B @ u
    r2 = B.T @ p - M @ u + f
    denom = np.linalg.norm(f)
    if denom == 0.0:
        return float(np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2))
    return float(np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2) / denom)


def apply_S_tilde(problem, u_vec):
    """Approximate Schur action: B^T p with A p = B u solved to 1e-10.

    The induced quadratic form <A^{-1} B u, B u> is nonnegative and
    symmetric.
    """
    u_vec = np.asarray(u_vec, dtype=float)
    if u_vec.shape[0] != problem.ops.B.shape[1]:
        raise linalg.DimensionMismatchError(
            f"expected {problem.ops.B.shape[1]} entries, got {u_vec.shape[0]}")
    bu = problem.ops.B @ u_vec
    p, rep = linalg.cg(problem.ops.A, bu, tol=1e-10)
    if not rep.converged:
        raise RuntimeError("inner solve for the Schur action failed")
    return problem.ops.B.T @ p


def reduced_cost(problem, u_vec):
    """Discrete quadratic cost 0.5 u'(rho S~ + M)u - f'u."""
    su = apply_S_tilde(problem, u_vec)
    return 0.5 * float(
        u_vec @ (problem.rho * su + problem.ops.M @ u_vec)
    ) - float(problem.ops.f @ u_vec)


def state_l2_norm(problem, u_vec):
    """Exact L2(Q) norm of the P1 state field (mass quadratic form)."""
    return float(np.sqrt(max(u_vec @ (problem.ops.M @ u_vec), 0.0)))


def nodal_field(problem, solution, which="u"):
    """Vertex vector of a solution component, zeros on constrained nodes."""
    if which == "u":
        return dofmap.prolongate(problem.dof_X, solution.u)
    if which == "p":
        return dofmap.prolongate(problem.dof_Y, solution.p)
    if which == "z":
        return dofmap.prolongate(problem.dof_Y, solution.z_nodal)
    raise ValueError(f"unknown field {which!r}")


class _StructuredLocator:
    """Point location on a Kuhn mesh: cell index plus coordinate sort."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.m = mesh.structured_m

    def locate(self, point):
        m, d = self.m, self.mesh.dim
        cell = np.minimum((np.asarray(point) * m).astype(int), m - 1)
        local = np.asarray(point) * m - cell
        order = np.argsort(-local, kind="stable")
        lam = np.empty(d + 1)
        ls = local[order]
        lam[0] = 1.0 - ls[0]
        lam[1:d] = ls[:-1] - ls[1:]
        lam[d] = ls[-1]
        vids = np.empty(d + 1, dtype=np.int64)
        strides = np.empty(d, dtype=np.int64)
        strides[-1] = (m + 1) ** (d - 1)
        for k in range(d - 1):
            strides[k] = (m + 1) ** (d - 2 - k)
        cur = cell.copy()
        vids[0] = cur @ strides
        for j, axis in enumerate(order):
            cur[axis] += 1
            vids[j + 1] = cur @ strides
        return vids, lam


class _GenericLocator:
    """Point location by candidate scan over a vertex-incidence index."""

    def __init__(self, mesh):
        self.mesh = mesh
        n = mesh.n_vertices
        self.incidence = [[] for _ in range(n)]
        for k, simplex in enumerate(mesh.simplices):
            for v in simplex:
                self.incidence[v].append(k)

    def locate(self, point):
        point = np.asarray(point, dtype=float)
        verts = self.mesh.vertices
        nearest = int(np.argmin(((verts - point) ** 2).sum(axis=1)))
        seen = set()
        frontier = list(self.incidence[nearest])
        for _ in range(64):
            nxt = []
            for k in frontier:
                if k in seen:
                    continue
                seen.add(k)
                lam = _barycentric(verts[self.mesh.simplices[k]], point)
                if lam.min() >= -1e-12:
                    return self.mesh.simplices[k], np.maximum(lam, 0.0)
                for v in self.mesh.simplices[k]:
                    nxt.extend(self.incidence[v])
            frontier = nxt
            if not frontier:
                break
        raise ValueError(f"point {point} not located in mesh")


def _barycentric(verts, point):
    d = verts.shape[1]
    mat = (verts[1:] - verts[0]).T
    lam_rest = np.linalg.solve(mat, point - verts[0])
    return np.concatenate([[1.0 - lam_rest.sum()], lam_rest])


def evaluate_state(problem, solution, point, which="u"):
    """P1 interpolation of a solution field at a point inside Q."""
    point = np.asarray(point, dtype=float)
    if point.shape != (problem.mesh.dim,):
        raise ValueError(f"point must have {problem.mesh.dim} coordinates")
    if np.any(point < 0.0) or np.any(point > 1.0):
        raise ValueError(f"point {point} outside the unit cylinder")
    locator = getattr(problem, "_locator_cache", None)
    if locator is None:
        if problem.mesh.structured_m is not None:
            locator = _StructuredLocator(problem.mesh)
        else:
            locator = _GenericLocator(problem.mesh)
        problem.__dict__["_locator_cache"] = locator
    vids, lam = locator.locate(point)
    field = nodal_field(problem, solution, which)
    return float(field[vids] @ lam)
