"""Vertex-to-unknown numbering for the trial and test spaces.

The trial space (role X) carries the state: zero on the lateral boundary
and at t = 0.  The test space (role Y) only vanishes on the lateral
boundary.  Vertices at the terminal time t = 1 are unknowns in both
spaces.  Constraints are derived from exact coordinate comparisons
(all mesh coordinates are dyadic).
"""

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    pass


@dataclass
class DofMap:
    """Bijection between unconstrained vertices and unknown indices.

    vertex_to_dof holds -1 for constrained vertices.
    """

    space_role: str
    vertex_to_dof: np.ndarray
    dof_to_vertex: np.ndarray
    count: int


def build_dofmap(mesh, role):
    """Number the free vertices of space X or Y on a classified mesh."""
    if role not in ("X", "Y"):
        raise ValueError(f"role must be 'X' or 'Y', got {role!r}")
    coords = mesh.vertices
    lateral = np.zeros(len(coords), dtype=bool)
    for axis in range(mesh.dim - 1):
        lateral |= (coords[:, axis] == 0.0) | (coords[:, axis] == 1.0)
    constrained = lateral.copy()
    if role == "X":
        constrained |= coords[:, -1] == 0.0
    vertex_to_dof = np.full(len(coords), -1, dtype=np.int64)
    free = np.flatnonzero(~constrained)
    vertex_to_dof[free] = np.arange(len(free))
    return DofMap(
        space_role=role,
        vertex_to_dof=vertex_to_dof,
        dof_to_vertex=free,
        count=len(free),
    )


def restrict(dofmap, v_free):
    """Extract the unknown entries from a full vertex vector."""
    v_free = np.asarray(v_free)
    if v_free.shape[0] != len(dofmap.vertex_to_dof):
        raise DimensionMismatchError(
            f"expected {len(dofmap.vertex_to_dof)} vertex values, got {v_free.shape[0]}"
        )
    return v_free[dofmap.dof_to_vertex].copy()


def prolongate(dofmap, v_constrained):
    """Embed an unknown vector as a vertex vector, zero on constraints."""
    v_constrained = np.asarray(v_constrained)
    if v_constrained.shape[0] != dofmap.count:
        raise DimensionMismatchError(
            f"expected {dofmap.count} unknowns, got {v_constrained.shape[0]}"
        )
    out = np.zeros(len(dofmap.vertex_to_dof), dtype=v_constrained.dtype)
    out[dofmap.dof_to_vertex] = v_constrained
    return out
