"""P1 finite element assembly on space-time simplicial meshes.

Three matrices drive the optimality system: the spatial stiffness form
on the test space (gradients in space only, time component dropped),
the state form combining the time derivative with the spatial
stiffness, and the full space-time mass matrix.  All element integrals
of P1 products have closed forms, so only the target load vector uses
quadrature.

Matrices are accumulated as COO triplets in a fixed element order and
compressed to CSR with index-sorted deterministic summation, so
assembled values are bitwise reproducible.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import quadrature


class DegenerateSimplexError(RuntimeError):
    pass


@dataclass
class AssembledOperators:
    """Matrices and load of the discrete optimality system.

    A: (M_Y, M_Y) spatial stiffness on the test space.
    B: (M_Y, M_X) state operator, rows test / columns trial.
    M: (M_X, M_X) space-time mass on the trial space.
    f: (M_X,) load from the target.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray


def p1_gradients(simplex_vertices):
    """Gradients of the d+1 hat functions on one simplex, plus volume.

    The gradients sum to zero (partition of unity).  Raises on
    degenerate elements.
    """
    verts = np.asarray(simplex_vertices, dtype=float)
    d = verts.shape[1]
    edges = (verts[1:] - verts[:1]).T  # columns are v_k - v_0
    det = np.linalg.det(edges)
    volume = det / math.factorial(d)
    diam = np.sqrt(((verts[None, :, :] - verts[:, None, :]) ** 2).sum(-1).max())
    if volume <= 1e-14 * diam**d:
        raise DegenerateSimplexError(f"simplex volume {volume} too small")
    inv = np.linalg.inv(edges)
    grads = np.empty((d + 1, d))
    grads[1:] = inv
    grads[0] = -inv.sum(axis=0)
    return grads, volume


def element_geometry(mesh):
    """Vectorized hat-function gradients and volumes for all elements."""
    verts = mesh.vertices[mesh.simplices]
    d = mesh.dim
    edges = np.swapaxes(verts[:, 1:] - verts[:, :1], 1, 2)
    det = np.linalg.det(edges)
    if np.any(det <= 0):
        raise DegenerateSimplexError("nonpositive element volume")
    vols = det / math.factorial(d)
    inv = np.linalg.inv(edges)
    grads = np.empty((len(verts), d + 1, d))
    grads[:, 1:] = inv
    grads[:, 0] = -inv.sum(axis=1)
    return grads, vols


def _compress(rows, cols, vals, shape):
    mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    mat.data[np.abs(mat.data) < 1e-300] = 0.0
    mat.eliminate_zeros()
    return mat


def _pairwise_triplets(mesh, local_matrices, dof_rows, dof_cols):
    """Scatter per-element (d+1)x(d+1) blocks into restricted COO triplets."""
    d1 = mesh.dim + 1
    n_rows = mesh.n_vertices if dof_rows is None else dof_rows.count
    n_cols = mesh.n_vertices if dof_cols is None else dof_cols.count
    rm = None if dof_rows is None else dof_rows.vertex_to_dof
    cm = None if dof_cols is None else dof_cols.vertex_to_dof
    rows, cols, vals = [], [], []
    simp = mesh.simplices
    for a in range(d1):
        ra = simp[:, a] if rm is None else rm[simp[:, a]]
        for b in range(d1):
            cb = simp[:, b] if cm is None else cm[simp[:, b]]
            v = local_matrices[:, a, b]
            if rm is None and cm is None:
                keep = slice(None)
            else:
                keep = (ra >= 0) & (cb >= 0)
            rows.append(ra[keep])
            cols.append(cb[keep])
            vals.append(v[keep])
    return _compress(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        (n_rows, n_cols),
    )


def assemble_A(mesh, dofmap_Y=None):
    """Spatial stiffness: entry = sum_K |K| grad_x phi_i . grad_x phi_j.

    With dofmap_Y=None the free (unrestricted) matrix over all vertices
    is returned; its kernel contains the constant vector.
    """
    grads, vols = element_geometry(mesh)
    gx = grads[:, :, :-1]  # drop the time component
    local = np.einsum("kad,kbd,k->kab", gx, gx, vols)
    return _pairwise_triplets(mesh, local, dofmap_Y, dofmap_Y)


def assemble_B(mesh, dofmap_X=None, dofmap_Y=None):
    """State operator: time derivative against tests plus spatial stiffness.

    entry (i, j) = sum_K [ (dt phi_j) |K|/(d+1) + |K| grad_x phi_j . grad_x phi_i ]
    with rows in the test space and columns in the trial space.
    """
    grads, vols = element_geometry(mesh)
    gx = grads[:, :, :-1]
    gt = grads[:, :, -1]
    d1 = mesh.dim + 1
    spatial = np.einsum("kbd,kad,k->kab", gx, gx, vols)
    timed = np.broadcast_to((gt * (vols / d1)[:, None])[:, None, :],
                            (len(vols), d1, d1))
    local = spatial + timed
    return _pairwise_triplets(mesh, local, dofmap_Y, dofmap_X)


def assemble_M(mesh, dofmap=None):
    """Exact P1 mass matrix: |K| (1 + delta_ab) / ((d+1)(d+2))."""
    _, vols = element_geometry(mesh)
    d1 = mesh.dim + 1
    base = (np.ones((d1, d1)) + np.eye(d1)) / (d1 * (d1 + 1))
    local = vols[:, None, None] * base[None]
    return _pairwise_triplets(mesh, local, dofmap, dofmap)


def assemble_load(mesh, target, dofmap=None, depth=4):
    """Load vector f_i = integral of target * phi_i over Q.

    Smooth targets use the order-3 rule in one shot; targets flagged
    non-smooth are integrated with red subdivision at the given depth
    and the order-2 base rule, descending only where the target reports
    it is not locally polynomial.  Composite targets (e.g. indicator
    plus oscillatory noise) are assembled per component and summed.
    """
    f = np.zeros(mesh.n_vertices)
    for comp in getattr(target, "components", None) or (target,):
        f += _load_component(mesh, comp, depth)
    if dofmap is None:
        return f
    return f[dofmap.dof_to_vertex].copy()


def _load_component(mesh, comp, depth):
    d = mesh.dim
    f = np.zeros(mesh.n_vertices)
    if comp.smoothness_class == "H2" and comp.resolution is None:
        qr = quadrature.rule(d, 3)
        verts = mesh.vertices[mesh.simplices]
        vols = quadrature.simplex_volumes(verts)
        pts = np.einsum("pk,bkd->bpd", qr.points, verts)
        w = qr.weights[None, :] * (vols * math.factorial(d))[:, None]
        vals = comp.evaluator(pts.reshape(-1, d)).reshape(w.shape)
        contrib = np.einsum("bp,pk->bk", w * vals, qr.points)
        np.add.at(f, mesh.simplices.ravel(), contrib.ravel())
        return f
    depths = _component_depths(mesh, comp, depth)
    elem_ids = np.arange(mesh.n_simplices)
    for ids, bary, phys, w in quadrature.subdivided_batches(
        mesh.vertices, mesh.simplices, elem_ids, depths, 2,
        simple_on_boxes=comp.simple_on_boxes,
    ):
        vals = comp.evaluator(phys.reshape(-1, d)).reshape(w.shape)
        contrib = np.einsum("bp,bpk->bk", w * vals, bary)
        flat = mesh.simplices[ids].ravel()
        f += np.bincount(flat, weights=contrib.ravel(), minlength=len(f))
    return f


def _component_depths(mesh, comp, depth):
    """Per-element subdivision depth.

    Components with an absolute resolution scale (oscillatory fields)
    subdivide until child edges fall below that scale; everything else
    uses the requested fixed depth, with locally-polynomial regions
    pruned by the component's box test during descent.
    """
    if comp.resolution is None:
        return int(depth)
    el = mesh.edge_lengths().max(axis=1) ** 0.5
    need = np.ceil(np.log2(np.maximum(el / comp.resolution, 1.0)))
    return np.minimum(need.astype(np.int64), int(depth))


def assemble_operators(mesh, target, dofmap_X, dofmap_Y, load_depth=4):
    """All operators of the discrete optimality system in one pass."""
    A = assemble_A(mesh, dofmap_Y)
    B = assemble_B(mesh, dofmap_X, dofmap_Y)
    M = assemble_M(mesh, dofmap_X)
    f = assemble_load(mesh, target, dofmap_X, depth=load_depth)
    return AssembledOperators(A=A, B=B, M=M, f=f)
