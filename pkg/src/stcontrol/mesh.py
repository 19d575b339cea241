"""Simplicial meshes of the unit space-time hypercube Q = (0,1)^d.

The last coordinate is time, the first d-1 are space.  Structured
meshes come from the Kuhn (Freudenthal) triangulation: each of the m^d
grid cells is split into d! congruent simplices, one per permutation of
the axes.  Local refinement bisects a simplex at its stored refinement
edge (the longest edge at creation time) and restores conformity by
recursively bisecting neighbours.

All vertex coordinates are dyadic rationals, exactly representable in
float64 at every refinement depth used here, so vertex deduplication
and edge-length tie-breaking are exact without merge tolerances.
"""

import itertools
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .quadrature import reference_children


class GeometryError(RuntimeError):
    """A facet or vertex violates the unit-hypercube geometry rules."""


class MeshCorruptionError(RuntimeError):
    """Conforming closure failed to terminate within the iteration cap."""


class BoundaryTag(IntEnum):
    INTERIOR = 0
    LATERAL = 1   # some space coordinate equal to 0 or 1
    INITIAL = 2   # t = 0
    TERMINAL = 3  # t = 1


def edge_pairs(d):
    """Local vertex index pairs (i, j), i < j, enumerating simplex edges."""
    return tuple(itertools.combinations(range(d + 1), 2))


@dataclass
class Mesh:
    """Conforming simplicial mesh with per-element refinement metadata.

    vertices: (N, d) float64, exact dyadic coordinates in [0,1]^d.
    simplices: (M, d+1) int64 vertex ids, positively oriented.
    ref_edge: (M,) int8 local edge index (into edge_pairs(d)).
    level: (M,) int32 bisection generation.
    structured_m: cells per axis if the mesh is an unrefined Kuhn mesh,
    else None.
    """

    dim: int
    vertices: np.ndarray
    simplices: np.ndarray
    ref_edge: np.ndarray
    level: np.ndarray
    h_max: float
    structured_m: int | None = None
    _facets: "FacetTags | None" = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_simplices(self):
        return len(self.simplices)

    def signed_volumes(self):
        edges = self.vertices[self.simplices[:, 1:]] - self.vertices[self.simplices[:, :1]]
        return np.linalg.det(edges) / math.factorial(self.dim)

    def edge_lengths(self):
        """Squared lengths of all element edges, shape (M, n_edges)."""
        pairs = np.array(edge_pairs(self.dim))
        va = self.vertices[self.simplices[:, pairs[:, 0]]]
        vb = self.vertices[self.simplices[:, pairs[:, 1]]]
        return ((va - vb) ** 2).sum(axis=2)

    def facet_tags(self):
        if self._facets is None:
            self._facets = classify_boundary(self)
        return self._facets


@dataclass
class FacetTags:
    """All mesh facets with incidence counts and boundary tags.

    facets: (F, d) int64, each row sorted ascending, rows lexsorted.
    counts: (F,) how many simplices share the facet (1 or 2).
    tags: (F,) int8 BoundaryTag values.
    """

    facets: np.ndarray
    counts: np.ndarray
    tags: np.ndarray

    def tag_of(self, facet_vertex_ids):
        key = np.sort(np.asarray(facet_vertex_ids))
        idx = _row_search(self.facets, key)
        if idx is None:
            raise KeyError(f"facet {tuple(key)} not in mesh")
        return BoundaryTag(self.tags[idx])

    def boundary_mask(self):
        return self.counts == 1


def _row_search(sorted_rows, key):
    lo, hi = 0, len(sorted_rows)
    key = tuple(key)
    while lo < hi:
        mid = (lo + hi) // 2
        row = tuple(sorted_rows[mid])
        if row < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < len(sorted_rows) and tuple(sorted_rows[lo]) == key:
        return lo
    return None


def _pick_refinement_edges(vertices, simplices):
    """Longest edge per element, ties broken by smallest vertex-id pair.

    Edge lengths of dyadic meshes are exact in float64, so the argmax
    and the tie comparison are exact.
    """
    d = vertices.shape[1]
    pairs = np.array(edge_pairs(d))
    va = vertices[simplices[:, pairs[:, 0]]]
    vb = vertices[simplices[:, pairs[:, 1]]]
    len2 = ((va - vb) ** 2).sum(axis=2)
    longest = len2.max(axis=1, keepdims=True)
    ids_a = simplices[:, pairs[:, 0]]
    ids_b = simplices[:, pairs[:, 1]]
    lo = np.minimum(ids_a, ids_b).astype(np.int64)
    hi = np.maximum(ids_a, ids_b).astype(np.int64)
    pair_key = lo * (simplices.max() + 1) + hi
    pair_key = np.where(len2 == longest, pair_key, np.iinfo(np.int64).max)
    return pair_key.argmin(axis=1).astype(np.int8)


def build_kuhn_mesh(d, m):
    """Kuhn/Freudenthal triangulation of (0,1)^d with m cells per axis.

    Produces (m+1)^d vertices and d! * m^d simplices.  Vertices are
    numbered with time (last axis) slowest, which groups unknowns into
    time slabs.
    """
    if d not in (2, 3, 4):
        raise ValueError(f"dimension must be 2, 3 or 4, got {d}")
    if m < 1:
        raise ValueError(f"cells per axis must be >= 1, got {m}")

    # Grid index (i_t, i_1, ..., i_{d-1}) in C order, time slowest:
    # vid = i_t*(m+1)^(d-1) + i_1*(m+1)^(d-2) + ... + i_{d-1}.
    idx = np.stack(
        np.meshgrid(*[np.arange(m + 1)] * d, indexing="ij"), axis=-1
    ).reshape(-1, d)
    vertices = np.empty((len(idx), d))
    vertices[:, -1] = idx[:, 0] / m
    vertices[:, :-1] = idx[:, 1:] / m

    # Strides in coordinate order (x_1, ..., x_{d-1}, t).
    strides = np.empty(d, dtype=np.int64)
    strides[-1] = (m + 1) ** (d - 1)
    for k in range(d - 1):
        strides[k] = (m + 1) ** (d - 2 - k)

    cells = np.stack(
        np.meshgrid(*[np.arange(m)] * d, indexing="ij"), axis=-1
    ).reshape(-1, d)

    perms = list(itertools.permutations(range(d)))
    n_perms = len(perms)
    simplices = np.empty((len(cells) * n_perms, d + 1), dtype=np.int64)
    base_ids = cells @ strides
    for p, perm in enumerate(perms):
        offsets = np.zeros((d + 1,), dtype=np.int64)
        ids = np.empty((len(cells), d + 1), dtype=np.int64)
        ids[:, 0] = base_ids
        acc = 0
        for j, axis in enumerate(perm):
            acc += strides[axis]
            ids[:, j + 1] = base_ids + acc
        if _perm_sign(perm) < 0:
            ids[:, [-2, -1]] = ids[:, [-1, -2]]
        simplices[p::n_perms] = ids

    # The longest edge of a Kuhn simplex is the cell diagonal p_0 -> p_d,
    # which sits at local pair (0, d), or (0, d-1) after the orientation
    # swap of the last two vertices for odd permutations.
    ref_edge = np.empty(len(simplices), dtype=np.int8)
    for p, perm in enumerate(perms):
        ref_edge[p::n_perms] = d - 1 if _perm_sign(perm) > 0 else d - 2
    mesh = Mesh(
        dim=d,
        vertices=vertices,
        simplices=simplices,
        ref_edge=ref_edge,
        level=np.zeros(len(simplices), dtype=np.int32),
        h_max=math.sqrt(d) / m,
        structured_m=m,
    )
    return mesh


def _perm_sign(perm):
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, cycle = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            cycle += 1
        if cycle % 2 == 0:
            sign = -sign
    return sign


def classify_boundary(mesh):
    """Tag every facet as Lateral / Initial / Terminal / Interior.

    A boundary facet (incident to exactly one simplex) is Lateral when
    all its vertices share a space coordinate equal to 0 or 1, Initial
    when all vertices have t = 0, Terminal when all have t = 1.
    Precedence Lateral > Initial > Terminal.  A boundary facet matching
    no rule raises GeometryError.
    """
    d = mesh.dim
    local = [tuple(j for j in range(d + 1) if j != i) for i in range(d + 1)]
    facets = np.concatenate([mesh.simplices[:, idx] for idx in local], axis=0)
    facets.sort(axis=1)
    order = np.lexsort(facets.T[::-1])
    facets = facets[order]
    boundary_change = np.ones(len(facets), dtype=bool)
    boundary_change[1:] = np.any(facets[1:] != facets[:-1], axis=1)
    uniq = facets[boundary_change]
    starts = np.flatnonzero(boundary_change)
    counts = np.diff(np.append(starts, len(facets))).astype(np.int64)

    tags = np.zeros(len(uniq), dtype=np.int8)
    on_boundary = counts == 1
    coords = mesh.vertices[uniq[on_boundary]]  # (Fb, d, d)
    lateral = np.zeros(on_boundary.sum(), dtype=bool)
    for axis in range(d - 1):
        for side in (0.0, 1.0):
            lateral |= np.all(coords[:, :, axis] == side, axis=1)
    initial = np.all(coords[:, :, -1] == 0.0, axis=1)
    terminal = np.all(coords[:, :, -1] == 1.0, axis=1)
    btags = np.where(
        lateral,
        BoundaryTag.LATERAL,
        np.where(initial, BoundaryTag.INITIAL,
                 np.where(terminal, BoundaryTag.TERMINAL, -1)),
    ).astype(np.int8)
    if np.any(btags < 0):
        bad = uniq[on_boundary][btags < 0][0]
        raise GeometryError(f"boundary facet {tuple(bad)} matches no tagging rule")
    tags[on_boundary] = btags
    return FacetTags(facets=uniq, counts=counts, tags=tags)


def refine_uniform(mesh):
    """Globally refine so every element diameter is halved.

    Kuhn meshes are rebuilt at twice the resolution (the Freudenthal
    triangulations are nested).  General meshes get d sweeps of
    bisect-everything, which halves diameters within a factor of 2.
    """
    if mesh.structured_m is not None:
        return build_kuhn_mesh(mesh.dim, 2 * mesh.structured_m)
    out = mesh
    for _ in range(mesh.dim):
        out = refine_bisection(out, np.arange(out.n_simplices))
    return out


def refine_bisection(mesh, marked):
    """Bisect the marked simplices and restore conformity.

    Every marked simplex is bisected at its refinement edge; neighbours
    whose facets would acquire hanging vertices are bisected recursively
    at their own refinement edges (conforming closure).  Terminates for
    the longest-edge-at-creation rule on dyadic meshes; a hard iteration
    cap of 100 * n_simplices guards against corrupted input.
    """
    marked = sorted(set(int(s) for s in np.asarray(marked, dtype=np.int64).ravel()))
    if not marked:
        return mesh
    if marked and (marked[0] < 0 or marked[-1] >= mesh.n_simplices):
        raise ValueError("marked set contains invalid simplex ids")

    d = mesh.dim
    pairs = edge_pairs(d)
    verts = [tuple(v) for v in mesh.vertices]
    vkey = {v: i for i, v in enumerate(verts)}
    coords = [np.array(v) for v in verts]

    simp = {}
    for i in range(mesh.n_simplices):
        simp[i] = (tuple(int(v) for v in mesh.simplices[i]),
                   int(mesh.ref_edge[i]), int(mesh.level[i]))
    next_id = mesh.n_simplices

    edge2elems = {}
    for i, (vids, _, _) in simp.items():
        for a, b in pairs:
            e = (vids[a], vids[b]) if vids[a] < vids[b] else (vids[b], vids[a])
            edge2elems.setdefault(e, set()).add(i)

    budget = [100 * mesh.n_simplices]

    def midpoint_id(e):
        mid = tuple((coords[e[0]] + coords[e[1]]) / 2.0)
        i = vkey.get(mid)
        if i is None:
            i = len(verts)
            vkey[mid] = i
            verts.append(mid)
            coords.append(np.array(mid))
        return i

    def ref_edge_global(el):
        vids, re, _ = simp[el]
        a, b = pairs[re]
        va, vb = vids[a], vids[b]
        return (va, vb) if va < vb else (vb, va)

    def child_ref_edge(vids):
        best = None
        for k, (a, b) in enumerate(pairs):
            dv = coords[vids[a]] - coords[vids[b]]
            l2 = float(dv @ dv)
            va, vb = vids[a], vids[b]
            pair = (va, vb) if va < vb else (vb, va)
            key = (-l2, pair)
            if best is None or key < best[0]:
                best = (key, k)
        return best[1]

    def bisect(el):
        nonlocal next_id
        vids, re, lvl = simp.pop(el)
        a, b = pairs[re]
        mid = midpoint_id(ref_edge_global_from(vids, re))
        for aa, bb in pairs:
            e = _norm_edge(vids[aa], vids[bb])
            s = edge2elems.get(e)
            if s is not None:
                s.discard(el)
                if not s:
                    del edge2elems[e]
        for drop in (b, a):
            child = list(vids)
            child[drop] = mid
            child = tuple(child)
            cid = next_id
            next_id += 1
            simp[cid] = (child, child_ref_edge(child), lvl + 1)
            for aa, bb in pairs:
                e = _norm_edge(child[aa], child[bb])
                edge2elems.setdefault(e, set()).add(cid)

    def ref_edge_global_from(vids, re):
        a, b = pairs[re]
        return _norm_edge(vids[a], vids[b])

    def split_edge(e0):
        # Bisect every element containing edge e0 at e0, bisecting at
        # their own refinement edges first where necessary.
        work = [e0]
        while work:
            budget[0] -= 1
            if budget[0] < 0:
                raise MeshCorruptionError("conforming closure exceeded iteration cap")
            e = work[-1]
            holders = edge2elems.get(e)
            if not holders:
                work.pop()
                continue
            el = min(holders)
            r = ref_edge_global(el)
            if r == e:
                bisect(el)
            else:
                work.append(r)

    for el in marked:
        if el in simp:
            split_edge(ref_edge_global(el))

    new_vertices = np.array(verts, dtype=float)
    ids = sorted(simp)
    simplices = np.array([simp[i][0] for i in ids], dtype=np.int64)
    ref_edge = np.array([simp[i][1] for i in ids], dtype=np.int8)
    level = np.array([simp[i][2] for i in ids], dtype=np.int32)
    edges = new_vertices[simplices[:, 1:]] - new_vertices[simplices[:, :1]]
    vols = np.linalg.det(edges)
    flip = vols < 0
    if np.any(flip):
        simplices[flip, -1], simplices[flip, -2] = (
            simplices[flip, -2].copy(), simplices[flip, -1].copy())
        ref_edge[flip] = _pick_refinement_edges(new_vertices, simplices[flip])
    pairs_arr = np.array(pairs)
    va = new_vertices[simplices[:, pairs_arr[:, 0]]]
    vb = new_vertices[simplices[:, pairs_arr[:, 1]]]
    h_max = math.sqrt(float(((va - vb) ** 2).sum(axis=2).max()))
    return Mesh(
        dim=d,
        vertices=new_vertices,
        simplices=simplices,
        ref_edge=ref_edge,
        level=level,
        h_max=h_max,
        structured_m=None,
    )


def _norm_edge(a, b):
    return (a, b) if a < b else (b, a)


def red_refine_children(d):
    return reference_children(d)


@dataclass
class MeshAudit:
    conforming: bool
    volume_ok: bool
    tags_ok: bool
    volume: float
    max_facet_count: int

    @property
    def ok(self):
        return self.conforming and self.volume_ok and self.tags_ok


def audit_mesh(mesh):
    """Check conformity, volume partition and boundary-tag completeness."""
    ft = mesh.facet_tags()
    conforming = bool(np.all((ft.counts == 1) | (ft.counts == 2)))
    tags_ok = bool(np.all(ft.tags[ft.counts == 1] != BoundaryTag.INTERIOR)) and bool(
        np.all(ft.tags[ft.counts == 2] == BoundaryTag.INTERIOR)
    )
    vols = mesh.signed_volumes()
    total = float(vols.sum())
    volume_ok = bool(np.all(vols > 0)) and abs(total - 1.0) <= 1e-12
    return MeshAudit(
        conforming=conforming,
        volume_ok=volume_ok,
        tags_ok=tags_ok,
        volume=total,
        max_facet_count=int(ft.counts.max()),
    )


def simplex_quality(mesh):
    """Inradius / diameter per element (shape-regularity measure)."""
    d = mesh.dim
    verts = mesh.vertices[mesh.simplices]
    vols = np.abs(np.linalg.det(verts[:, 1:] - verts[:, :1])) / math.factorial(d)
    pairs = np.array(edge_pairs(d))
    va = verts[:, pairs[:, 0]]
    vb = verts[:, pairs[:, 1]]
    diam = np.sqrt(((va - vb) ** 2).sum(axis=2).max(axis=1))
    # facet (d-1)-measures via Gram determinants
    area_sum = np.zeros(len(verts))
    for skip in range(d + 1):
        idx = [j for j in range(d + 1) if j != skip]
        fv = verts[:, idx]
        e = fv[:, 1:] - fv[:, :1]
        gram = np.einsum("bik,bjk->bij", e, e)
        area_sum += np.sqrt(np.maximum(np.linalg.det(gram), 0.0)) / math.factorial(d - 1)
    inradius = d * vols / area_sum
    return inradius / diam
