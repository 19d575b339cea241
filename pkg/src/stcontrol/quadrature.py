"""Symmetric quadrature rules on simplices and subdivided integration.

All rules are stated in barycentric coordinates on the reference
d-simplex conv(0, e_1, ..., e_d), whose volume is 1/d!.  Weights sum to
that volume, so applying a rule to a physical simplex K scales the
weights by |K| * d!.

Non-polynomial integrands (indicator targets, oscillatory noise) are
handled by recursive red subdivision: every simplex splits into 2^d
children through its edge midpoints.  The children are precomputed once
per dimension in barycentric form, so subdivision of an arbitrary
simplex is a single tensor contraction.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class UnsupportedRuleError(ValueError):
    """Requested (dimension, order) pair has no registered rule."""


@dataclass(frozen=True)
class QuadRule:
    """Quadrature rule in barycentric coordinates on the reference simplex.

    points has shape (n, d+1), weights shape (n,) and sums to 1/d!.
    """

    dim: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self):
        return len(self.weights)


def barycentric_moment(alpha):
    """Exact integral of a barycentric monomial over the reference simplex.

    For exponents alpha = (a_0, ..., a_d):
    integral of prod lambda_i^{a_i} over the simplex of volume 1/d! equals
    prod(a_i!) / (|a| + d)!.
    """
    alpha = tuple(int(a) for a in alpha)
    d = len(alpha) - 1
    num = 1
    for a in alpha:
        num *= math.factorial(a)
    return num / math.factorial(sum(alpha) + d)


def _centroid_rule(d):
    pts = np.full((1, d + 1), 1.0 / (d + 1))
    wts = np.array([1.0 / math.factorial(d)])
    return pts, wts


def _degree2_rule(d):
    # (d+1)-point fully symmetric rule: one coordinate r, the rest s.
    s = (1.0 - 1.0 / math.sqrt(d + 2)) / (d + 1)
    r = 1.0 - d * s
    pts = np.full((d + 1, d + 1), s)
    np.fill_diagonal(pts, r)
    wts = np.full(d + 1, 1.0 / (d + 1) / math.factorial(d))
    return pts, wts


def _grundmann_moeller_rule(d, k):
    # Degree 2k+1 rule; all points interior, some weights negative.
    s = 2 * k + 1
    pts, wts = [], []
    for i in range(k + 1):
        denom = s + d - 2 * i
        w = ((-1) ** i) * 2.0 ** (-2 * k) * denom**s / (
            math.factorial(i) * math.factorial(s + d - i)
        )
        for beta in _compositions(k - i, d + 1):
            pts.append([(2 * b + 1) / denom for b in beta])
            wts.append(w)
    return np.array(pts), np.array(wts)


def _compositions(total, slots):
    # All tuples of `slots` nonnegative ints summing to `total`.
    if slots == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, slots - 1):
            yield (first,) + rest


def _verify_exactness(d, order, pts, wts):
    for beta in itertools.product(range(order + 1), repeat=d):
        if sum(beta) > order:
            continue
        exact = barycentric_moment((0,) + beta)
        vals = np.prod(pts[:, 1:] ** np.array(beta), axis=1)
        got = float(wts @ vals)
        if abs(got - exact) > 1e-13 * max(1.0, abs(exact)):
            raise AssertionError(
                f"rule(d={d}, order={order}) misses monomial {beta}: "
                f"{got} vs {exact}"
            )


@lru_cache(maxsize=None)
def rule(d, order):
    """Quadrature rule exact for polynomials of total degree <= order.

    Supported: d in {2,3,4} with order in {1,2,3,4} for d<=3 and
    order in {1,2,3} for d=4.  Exactness is verified at construction
    against the closed-form monomial integrals.
    """
    if d not in (2, 3, 4):
        raise UnsupportedRuleError(f"dimension {d} not supported")
    max_order = 3 if d == 4 else 4
    if order < 1 or order > max_order:
        raise UnsupportedRuleError(f"order {order} not supported for d={d}")
    if order == 1:
        pts, wts = _centroid_rule(d)
    elif order == 2:
        pts, wts = _degree2_rule(d)
    elif order == 3:
        pts, wts = _grundmann_moeller_rule(d, 1)
    else:
        pts, wts = _grundmann_moeller_rule(d, 2)
    _verify_exactness(d, order, pts, wts)
    return QuadRule(d, pts, wts)


@lru_cache(maxsize=None)
def reference_children(d):
    """Barycentric vertices of the 2^d red-subdivision children.

    Returns an array C of shape (2^d, d+1, d+1): child c has vertices
    C[c] @ V for parent vertex array V of shape (d+1, d).  Derived from
    the self-refinement of the Kuhn simplex {x_1 >= x_2 >= ... >= x_d},
    whose m=2 Freudenthal triangulation tiles it with 2^d half-size
    simplices using only edge midpoints.
    """
    children = []
    for cell in itertools.product((0, 1), repeat=d):
        for perm in itertools.permutations(range(d)):
            verts = [np.array(cell, dtype=float)]
            for axis in perm:
                nxt = verts[-1].copy()
                nxt[axis] += 1.0
                verts.append(nxt)
            if all(_is_sorted_desc(v) for v in verts):
                children.append(np.array(verts) / 2.0)
    assert len(children) == 2**d
    out = np.zeros((2**d, d + 1, d + 1))
    for c, verts in enumerate(children):
        for k, x in enumerate(verts):
            # Kuhn-simplex barycentric closed form for sorted coordinates.
            lam = np.empty(d + 1)
            lam[0] = 1.0 - x[0]
            lam[1:d] = x[: d - 1] - x[1:]
            lam[d] = x[d - 1]
            out[c, k] = lam
    return out


def _is_sorted_desc(x):
    return all(x[i] >= x[i + 1] for i in range(len(x) - 1))


def simplex_volumes(verts):
    """Unsigned volumes for a (n, d+1, d) stack of simplex vertices."""
    d = verts.shape[-1]
    edges = verts[..., 1:, :] - verts[..., :1, :]
    return np.abs(np.linalg.det(edges)) / math.factorial(d)


def subdivided_batches(vertices, simplices, elem_ids, depths, order,
                       simple_on_boxes=None, batch_rows=250_000):
    """Generate quadrature point batches with recursive red subdivision.

    Yields tuples (ids, bary, phys, weights) where ids maps each batch
    row to its parent element, bary holds the points in parent
    barycentric coordinates (rows, n_pts, d+1), phys the physical
    coordinates (rows, n_pts, d) and weights the physical quadrature
    weights (rows, n_pts).

    A sub-simplex stops subdividing when its remaining depth hits zero
    or when simple_on_boxes(lo, hi) reports the integrand is exactly
    captured by the base rule on its bounding box.  Without
    simple_on_boxes the subdivision is uniform: depth L yields exactly
    2^(d*L) children per element.
    """
    d = vertices.shape[1]
    qr = rule(d, order)
    children = reference_children(d)
    n_child = len(children)
    dfact = math.factorial(d)

    elem_ids = np.asarray(elem_ids, dtype=np.int64)
    depths = np.broadcast_to(np.asarray(depths, dtype=np.int64), elem_ids.shape)

    stack = []
    eye = np.broadcast_to(np.eye(d + 1), (len(elem_ids), d + 1, d + 1))
    for start in range(0, len(elem_ids), batch_rows):
        sl = slice(start, start + batch_rows)
        stack.append((elem_ids[sl], eye[sl], depths[sl]))

    while stack:
        ids, bary, depth = stack.pop()
        verts = vertices[simplices[ids]]
        phys_verts = np.einsum("bij,bjd->bid", bary, verts)
        done = depth <= 0
        if simple_on_boxes is not None:
            lo = phys_verts.min(axis=1)
            hi = phys_verts.max(axis=1)
            done = done | simple_on_boxes(lo, hi)
        if np.any(done):
            pv = phys_verts[done]
            vols = simplex_volumes(pv)
            w = qr.weights[None, :] * (vols * dfact)[:, None]
            bpts = np.einsum("pk,bkj->bpj", qr.points, bary[done])
            ppts = np.einsum("pk,bkd->bpd", qr.points, pv)
            yield ids[done], bpts, ppts, w
        live = ~done
        if np.any(live):
            sub = np.einsum("ckj,bji->cbki", children, bary[live])
            sub = sub.reshape(n_child * live.sum(), d + 1, d + 1)
            new_ids = np.tile(ids[live], n_child)
            new_depth = np.tile(depth[live] - 1, n_child)
            for start in range(0, len(new_ids), batch_rows):
                sl = slice(start, start + batch_rows)
                stack.append((new_ids[sl], sub[sl], new_depth[sl]))


def integrate_subdivided(f, simplex_vertices, depth, base_order):
    """Integrate a scalar field over one simplex with uniform subdivision.

    The simplex is red-subdivided `depth` times into 2^(d*depth)
    children and the base rule of the given order is applied on each.
    For polynomial f of degree <= base_order the value is independent
    of depth up to roundoff.
    """
    verts = np.asarray(simplex_vertices, dtype=float)
    d = verts.shape[1]
    simplices = np.arange(d + 1, dtype=np.int64)[None, :]
    total = 0.0
    for _ids, _bary, phys, w in subdivided_batches(
        verts, simplices, np.array([0]), int(depth), base_order
    ):
        vals = f(phys.reshape(-1, d)).reshape(w.shape)
        total += float(np.sum(w * vals))
    return total
