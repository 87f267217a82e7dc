#!/usr/bin/env python3
"""
Helmholtz Kernel & Pair Quadrature
Galerkin double integrals of the 3D Helmholtz kernel over pairs of coplanar triangles

Every routine produces physical point pairs (x, y) with weights w; moments are then
    M[a][b] = sum w * Phi(|x - y|) * bary_T(x)[a] * bary_T'(y)[b]
Singular pairs (coincident, common edge, common vertex) use relative-coordinate
transforms with Duffy splitting so the integrand is smooth in the new variables.
Near pairs are subdivided; well-separated pairs use collapsed tensor Gauss.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from errors import QuadratureError, SingularEvaluationError

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi

COINCIDENT, COMMON_EDGE, COMMON_VERTEX, NEAR, REGULAR = 'coincident', 'edge', 'vertex', 'near', 'regular'

# shared-vertex tolerance relative to the triangle diameter
VERTEX_TOL = 1e-9
# keeps pairs sitting exactly on the separation threshold on the regular side
SEPARATION_BIAS = 1e-6


@dataclass(frozen=True)
class QuadratureConfig:
    regular_order: int = 4
    singular_order: int = 6
    separation_ratio: float = 2.0

    def __post_init__(self):
        if self.regular_order < 1 or self.singular_order < 1:
            raise QuadratureError(f"Quadrature orders must be >= 1, got "
                                  f"{self.regular_order}/{self.singular_order}")
        if not self.separation_ratio > 0:
            raise QuadratureError(f"separation_ratio must be positive, got {self.separation_ratio}")


@dataclass(frozen=True, eq=False)
class MomentTensor:
    """3x3 barycentric moments of the kernel over a triangle pair"""

    values: np.ndarray
    kind: str = REGULAR

    def constant_density(self):
        return complex(self.values.sum())

    def __getitem__(self, item):
        return self.values[item]


# =============================================================================
# KERNEL
# =============================================================================

def helmholtz_kernel(r, k):
    """e^{ikr} / (4 pi r) for r > 0, no checks"""
    return np.exp(1j * k * r) / (FOUR_PI * r)


def green3d(x, y, k):
    """Free-space Helmholtz Green's function between points (broadcasting over leading axes)"""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0.0):
        raise SingularEvaluationError("Green's function evaluated at coincident points (r = 0)")
    if k < 0:
        raise QuadratureError(f"Wavenumber must be nonnegative, got {k}")
    out = helmholtz_kernel(r, k)
    return complex(out) if np.ndim(out) == 0 else out


# =============================================================================
# RULES
# =============================================================================

@lru_cache(maxsize=None)
def gauss01(n):
    """Gauss-Legendre nodes and weights on [0, 1]"""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(n):
    """
    Collapsed Gauss rule on the reference triangle (0,0), (1,0), (0,1).
    Returns parameters (s, t) of shape (n^2, 2) and weights summing to 1/2.
    """
    g, wg = gauss01(n)
    a, b = np.meshgrid(g, g, indexing='ij')
    wa, wb = np.meshgrid(wg, wg, indexing='ij')
    st = np.stack([(a * (1.0 - b)).ravel(), (a * b).ravel()], axis=1)
    return st, (a * wa * wb).ravel()


@lru_cache(maxsize=None)
def _tensor4(n):
    g, wg = gauss01(n)
    grids = np.meshgrid(g, g, g, g, indexing='ij')
    wgrids = np.meshgrid(wg, wg, wg, wg, indexing='ij')
    weight = wgrids[0] * wgrids[1] * wgrids[2] * wgrids[3]
    return tuple(c.ravel() for c in grids), weight.ravel()


def reference_barycentric(st):
    return np.stack([1.0 - st[:, 0] - st[:, 1], st[:, 0], st[:, 1]], axis=1)


def twice_area(tri):
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    return np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def diameter(tri):
    return max(np.linalg.norm(tri[i] - tri[(i + 1) % 3]) for i in range(3))


def map_to_triangle(tri, st):
    """Physical points of reference parameters on one or many triangles"""
    tri = np.asarray(tri, dtype=float)
    v0 = tri[..., 0:1, :]
    return v0 + st[:, 0:1] * (tri[..., 1:2, :] - v0) + st[:, 1:2] * (tri[..., 2:3, :] - v0)


def barycentric(tri, pts):
    """Barycentric coordinates of points in a triangle through the inverse affine map"""
    jac = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
    st = np.linalg.solve(jac, (np.asarray(pts) - tri[0]).T).T
    return reference_barycentric(st)


def barycentric_gradients(tri):
    """Constant gradients (3, 2) of the barycentric functions of a triangle"""
    jac = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
    inv = np.linalg.inv(jac)
    return np.stack([-inv[0] - inv[1], inv[0], inv[1]])


def subdivide(tri):
    """Four congruent children by edge midpoints"""
    v0, v1, v2 = tri
    m01, m12, m20 = 0.5 * (v0 + v1), 0.5 * (v1 + v2), 0.5 * (v2 + v0)
    return [np.array([v0, m01, m20]), np.array([m01, v1, m12]),
            np.array([m20, m12, v2]), np.array([m12, m20, m01])]


def _check_triangle(tri):
    d = diameter(tri)
    if not d > 0 or twice_area(tri) <= 1e-14 * d * d:
        raise QuadratureError(f"Degenerate triangle: {tri.tolist()}")


# =============================================================================
# CLASSIFICATION
# =============================================================================

def _shared_vertices(tri_x, tri_y, tol):
    pairs = []
    for i in range(3):
        for j in range(3):
            if np.linalg.norm(tri_x[i] - tri_y[j]) <= tol:
                pairs.append((i, j))
    return pairs


def _point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def triangle_distance(tri_x, tri_y):
    """Distance between two disjoint coplanar triangles"""
    best = math.inf
    for p, q in ((tri_x, tri_y), (tri_y, tri_x)):
        for i in range(3):
            for j in range(3):
                best = min(best, _point_segment_distance(p[i], q[j], q[(j + 1) % 3]))
    return best


def classify_pair(tri_x, tri_y, separation_ratio):
    """Adjacency class of a triangle pair and the shared vertex index pairs"""
    h = max(diameter(tri_x), diameter(tri_y))
    shared = _shared_vertices(tri_x, tri_y, VERTEX_TOL * h)
    if len(shared) == 3:
        return COINCIDENT, shared
    if len(shared) == 2:
        return COMMON_EDGE, shared
    if len(shared) == 1:
        return COMMON_VERTEX, shared
    if triangle_distance(tri_x, tri_y) / h < separation_ratio - SEPARATION_BIAS:
        return NEAR, shared
    return REGULAR, shared


# =============================================================================
# POINT-PAIR RULES
# =============================================================================

def coincident_points(tri, n):
    """
    Self-interaction of one triangle. For each edge PQ with opposite vertex K,
    x runs over the triangle from PQ to K and y over the sub-triangle (x, P, Q);
    the (w, v - t) corner is Duffy-split into two regions.
    """
    (tau, u, rho, sig), base = _tensor4(n)
    a2 = twice_area(tri)
    xs, ys, ws = [], [], []
    for e in range(3):
        P, Q, K = tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]
        for w_first in (True, False):
            if w_first:
                w, s = rho, rho * sig
            else:
                s, w = rho, rho * sig
            for sign in (1.0, -1.0):
                if sign > 0:
                    t = (1.0 - s) * tau
                    v = t + s
                else:
                    t = s + (1.0 - s) * tau
                    v = t - s
                pt = P + t[:, None] * (Q - P)
                pv = P + v[:, None] * (Q - P)
                x = (1.0 - w)[:, None] * pt + w[:, None] * K
                y = x + u[:, None] * (pv - x)
                xs.append(x)
                ys.append(y)
                ws.append(base * rho * (1.0 - s) * a2 * (1.0 - w) * u * a2 * w)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def common_edge_points(tri_x, tri_y, n):
    """
    tri_x = (P, Q, K), tri_y = (P, Q, K') sharing the edge PQ. Both points are
    parametrised from the edge; the cube in (|v - t|, w, z) is split in three pyramids.
    """
    P, Q, K = tri_x
    Ky = tri_y[2]
    ax, ay = twice_area(tri_x), twice_area(tri_y)
    (tau, rho, s1, s2), base = _tensor4(n)
    xs, ys, ws = [], [], []
    for apex in range(3):
        lead, o1, o2 = rho, rho * s1, rho * s2
        if apex == 0:
            s, w, z = lead, o1, o2
        elif apex == 1:
            w, s, z = lead, o1, o2
        else:
            z, s, w = lead, o1, o2
        for sign in (1.0, -1.0):
            if sign > 0:
                t = (1.0 - s) * tau
                v = t + s
            else:
                t = s + (1.0 - s) * tau
                v = t - s
            x = (1.0 - w)[:, None] * (P + t[:, None] * (Q - P)) + w[:, None] * K
            y = (1.0 - z)[:, None] * (P + v[:, None] * (Q - P)) + z[:, None] * Ky
            xs.append(x)
            ys.append(y)
            ws.append(base * rho * rho * (1.0 - s) * ax * (1.0 - w) * ay * (1.0 - z))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def common_vertex_points(tri_x, tri_y, n):
    """tri_x = (P, A1, A2), tri_y = (P, B1, B2); Duffy from P on both, split on (alpha, gamma)"""
    P = tri_x[0]
    ax, ay = twice_area(tri_x), twice_area(tri_y)
    (rho, sig, beta, delta), base = _tensor4(n)
    xs, ys, ws = [], [], []
    for alpha_first in (True, False):
        if alpha_first:
            alpha, gamma = rho, rho * sig
        else:
            gamma, alpha = rho, rho * sig
        x = P + alpha[:, None] * ((1.0 - beta)[:, None] * (tri_x[1] - P) + beta[:, None] * (tri_x[2] - P))
        y = P + gamma[:, None] * ((1.0 - delta)[:, None] * (tri_y[1] - P) + delta[:, None] * (tri_y[2] - P))
        xs.append(x)
        ys.append(y)
        ws.append(base * rho * ax * alpha * ay * gamma)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def regular_points(tri_x, tri_y, n):
    st, w = triangle_rule(n)
    x = map_to_triangle(tri_x, st)
    y = map_to_triangle(tri_y, st)
    q = len(w)
    wx = w * twice_area(tri_x)
    wy = w * twice_area(tri_y)
    return (np.repeat(x, q, axis=0), np.tile(y, (q, 1)), np.outer(wx, wy).ravel())


def near_points(tri_x, tri_y, n):
    """One level of subdivision on both triangles, tensor Gauss on each child pair"""
    parts = [regular_points(cx, cy, n) for cx in subdivide(tri_x) for cy in subdivide(tri_y)]
    return tuple(np.concatenate(p) for p in zip(*parts))


def _reorder(tri, first):
    """Rotate vertex order so the given indices come first, keeping the rest in order"""
    rest = [i for i in range(3) if i not in first]
    return tri[list(first) + rest]


def pair_points(tri_x, tri_y, cfg):
    """Classify the pair and return its point-pair rule (x, y, w) and class"""
    kind, shared = classify_pair(tri_x, tri_y, cfg.separation_ratio)
    n = cfg.singular_order
    if kind == COINCIDENT:
        return coincident_points(tri_x, n), kind
    if kind == COMMON_EDGE:
        (i0, j0), (i1, j1) = shared
        return common_edge_points(_reorder(tri_x, (i0, i1)), _reorder(tri_y, (j0, j1)), n), kind
    if kind == COMMON_VERTEX:
        (i0, j0), = shared
        return common_vertex_points(_reorder(tri_x, (i0,)), _reorder(tri_y, (j0,)), n), kind
    if kind == NEAR:
        return near_points(tri_x, tri_y, n), kind
    return None, kind


def pair_moments(tri_x, tri_y, k, cfg):
    """
    Barycentric kernel moments M[a][b] of a coplanar triangle pair; x runs over
    tri_x (test), y over tri_y (trial). Vertex order of the inputs fixes a and b.
    """
    tri_x = np.asarray(tri_x, dtype=float)[:, :2]
    tri_y = np.asarray(tri_y, dtype=float)[:, :2]
    _check_triangle(tri_x)
    _check_triangle(tri_y)

    rule, kind = pair_points(tri_x, tri_y, cfg)
    if rule is None:
        values = regular_moments(tri_x, tri_y[None], k, cfg.regular_order)[0]
        return MomentTensor(values, kind)

    x, y, w = rule
    r = np.linalg.norm(x - y, axis=1)
    if np.any(r == 0.0):
        raise SingularEvaluationError(f"Quadrature point pair at zero distance ({kind})")
    kw = w * helmholtz_kernel(r, k)
    bx = barycentric(tri_x, x)
    by = barycentric(tri_y, y)
    values = np.einsum('q,qa,qb->ab', kw, bx, by)
    return MomentTensor(values, kind)


def regular_moments(tri_x, tris_y, k, order):
    """
    Tensor Gauss moments for many well-separated pairs at once.
    tri_x is (3, 2) or (m, 3, 2); tris_y is (m, 3, 2). Returns (m, 3, 3).
    """
    st, w = triangle_rule(order)
    bary = reference_barycentric(st)
    tri_x = np.asarray(tri_x, dtype=float)
    tris_y = np.asarray(tris_y, dtype=float)
    x = map_to_triangle(tri_x, st)                 # (q, 2) or (m, q, 2)
    y = map_to_triangle(tris_y, st)                # (m, q, 2)
    if x.ndim == 2:
        x = x[None]
    d = x[:, :, None, :] - y[:, None, :, :]
    r = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
    wx = np.atleast_1d(twice_area(tri_x))[:, None] * w[None, :]
    wy = twice_area(tris_y)[:, None] * w[None, :]
    kern = helmholtz_kernel(r, k) * wx[:, :, None] * wy[:, None, :]
    return np.einsum('mij,ia,jb->mab', kern, bary, bary)


def constant_self_integral(tri):
    """Closed form of the double integral of 1/|x - y| over one triangle"""
    tri = np.asarray(tri, dtype=float)
    lengths = [np.linalg.norm(tri[(i + 1) % 3] - tri[i]) for i in range(3)]
    perimeter = sum(lengths)
    area = 0.5 * twice_area(tri)
    return 4.0 * area * area / 3.0 * sum(math.log(perimeter / (perimeter - 2.0 * l)) / l for l in lengths)
