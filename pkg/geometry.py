#!/usr/bin/env python3
"""
Prefractal Screen Geometry
Generates boundary polygons of the classical (Koch) snowflake and the square
snowflake prefractals with exact integer lattice coordinates

Lattice polygons store vertices as integers (a, b) meaning the physical point
pitch * (a * e1 + b * e2), where e1, e2 are the unit lattice directions:
    triangular lattice (Koch, beta = pi/6): e1 = (1, 0), e2 = (1/2, sqrt(3)/2)
    square lattice (square snowflake):      e1 = (1, 0), e2 = (0, 1)
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from errors import GeometryError

logger = logging.getLogger(__name__)

TRIANGULAR_BASIS = np.array([[1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])
SQUARE_BASIS = np.array([[1.0, 0.0], [0.0, 1.0]])

KOCH_LATTICE_BETA = math.pi / 6.0


@dataclass(frozen=True)
class PrefractalPolygon:
    """Counter-clockwise boundary polygon of a prefractal Gamma_j"""

    family: str                 # 'koch' or 'square'
    level: int
    vertices: np.ndarray        # (n, 2) int64 lattice units, or float64 physical when not lattice
    pitch: Fraction | None      # lattice pitch; None for non-lattice polygons
    beta: float | None = None   # Koch apex half-angle, None for the square snowflake
    lattice: bool = True

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.vertices)

    @property
    def basis(self):
        return TRIANGULAR_BASIS if self.family == 'koch' else SQUARE_BASIS

    @property
    def theta(self):
        """Interior angle of the lattice parallelogram"""
        return math.pi / 3.0 if self.family == 'koch' else math.pi / 2.0

    def physical_vertices(self):
        """Vertices in physical coordinates, shape (n, 2)"""
        if not self.lattice:
            return np.asarray(self.vertices, dtype=float)
        return (self.vertices.astype(float) @ self.basis) * float(self.pitch)

    def twice_area_units(self):
        """Exact shoelace sum (twice the signed area) in lattice coordinates"""
        if not self.lattice:
            raise GeometryError("Exact area is only available for lattice polygons")
        return shoelace_twice_area(self.vertices)

    def exact_area(self):
        """Exact area as a Fraction (square lattice only)"""
        if self.family != 'square':
            raise GeometryError("Exact rational area needs the square lattice")
        return Fraction(self.twice_area_units(), 2) * self.pitch ** 2

    def area(self):
        if self.lattice:
            cell_det = abs(np.linalg.det(self.basis))
            return 0.5 * self.twice_area_units() * cell_det * float(self.pitch) ** 2
        return 0.5 * float_shoelace(self.physical_vertices())

    def centroid(self):
        """Area centroid in physical coordinates"""
        xy = self.physical_vertices()
        x, y = xy[:, 0], xy[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a6 = 3.0 * cross.sum()
        return np.array([((x + xn) * cross).sum() / a6, ((y + yn) * cross).sum() / a6])

    def edge_lengths(self):
        xy = self.physical_vertices()
        return np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)

    def metadata(self):
        return {
            'family': self.family,
            'beta': '' if self.beta is None else repr(self.beta),
            'level': str(self.level),
            'pitch': '' if self.pitch is None else str(self.pitch),
            'lattice': str(self.lattice).lower(),
            'vertices': str(self.n_vertices),
        }


def shoelace_twice_area(vertices):
    """Exact integer shoelace sum; positive for counter-clockwise polygons"""
    v = np.asarray(vertices, dtype=np.int64)
    vn = np.roll(v, -1, axis=0)
    return int((v[:, 0] * vn[:, 1] - vn[:, 0] * v[:, 1]).sum())


def float_shoelace(xy):
    """Twice the signed area of a polygon with floating-point vertices"""
    xn = np.roll(xy, -1, axis=0)
    return float((xy[:, 0] * xn[:, 1] - xn[:, 0] * xy[:, 1]).sum())


def _check_level(j):
    if not isinstance(j, (int, np.integer)) or isinstance(j, bool):
        raise GeometryError(f"Prefractal level must be an integer, got {j!r}")
    if j < 0:
        raise GeometryError(f"Prefractal level must be nonnegative, got {j}")


def koch_prefractal(beta, j):
    """
    Boundary of the level-j classical snowflake prefractal with apex angle 2*beta.
    beta = pi/6 gives the Koch snowflake on the triangular lattice of pitch 3^-j;
    any other beta is generated in floating point and flagged non-lattice.
    """
    _check_level(j)
    if not (0.0 < beta < math.pi / 2.0):
        raise GeometryError(f"beta must lie in (0, pi/2), got {beta}")

    if math.isclose(beta, KOCH_LATTICE_BETA, rel_tol=0.0, abs_tol=1e-14):
        verts = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.int64)
        for _ in range(j):
            a = verts * 3
            b = np.roll(a, -1, axis=0)
            w = (b - a) // 3
            s1 = a + w
            s2 = a + 2 * w
            # clockwise rotation by 60 degrees in lattice coordinates: (p, q) -> (p + q, -p)
            apex = s1 + np.stack([w[:, 0] + w[:, 1], -w[:, 0]], axis=1)
            verts = np.stack([a, s1, apex, s2], axis=1).reshape(-1, 2)
        polygon = PrefractalPolygon('koch', j, verts, Fraction(1, 3 ** j), KOCH_LATTICE_BETA, True)
    else:
        z = np.array([0.0, 1.0, complex(0.5, math.sqrt(3.0) / 2.0)])
        for _ in range(j):
            zn = np.roll(z, -1)
            length = np.abs(zn - z)
            u = (zn - z) / length
            leg = length / (2.0 * (1.0 + math.sin(beta)))
            s1 = z + leg * u
            s2 = zn - leg * u
            apex = 0.5 * (s1 + s2) - 1j * u * leg * math.cos(beta)
            z = np.stack([z, s1, apex, s2], axis=1).reshape(-1)
        verts = np.stack([z.real, z.imag], axis=1)
        polygon = PrefractalPolygon('koch', j, verts, None, float(beta), False)
        logger.info(f"⚠️ beta={beta:.6f} is not lattice-conforming; polygon generated in floating point")

    logger.debug(f"📐 Koch prefractal j={j}: {polygon.n_vertices} vertices")
    return polygon


def square_prefractal(j):
    """
    Boundary of the level-j square snowflake on the square lattice of pitch 4^-j.
    Each directed edge is rewritten into eight unit segments: one square pushed to
    the exterior on the second quarter, one square cut from the interior on the third.
    """
    _check_level(j)
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.int64)
    for _ in range(j):
        a = verts * 4
        b = np.roll(a, -1, axis=0)
        u = (b - a) // 4
        # exterior normal of a counter-clockwise polygon: clockwise rotation (p, q) -> (q, -p)
        n = np.stack([u[:, 1], -u[:, 0]], axis=1)
        motif = [a,
                 a + u,
                 a + u + n,
                 a + 2 * u + n,
                 a + 2 * u,
                 a + 2 * u - n,
                 a + 3 * u - n,
                 a + 3 * u]
        verts = np.stack(motif, axis=1).reshape(-1, 2)
    polygon = PrefractalPolygon('square', j, verts, Fraction(1, 4 ** j), None, True)
    logger.debug(f"📐 Square prefractal j={j}: {polygon.n_vertices} vertices")
    return polygon


def make_prefractal(family, j, beta=KOCH_LATTICE_BETA):
    """Dispatch on the family name used by the configuration layer"""
    if family == 'koch':
        return koch_prefractal(beta, j)
    if family == 'square':
        return square_prefractal(j)
    raise GeometryError(f"Unknown prefractal family: {family!r}")


# =============================================================================
# EXACT PREDICATES
# =============================================================================

def locate_points(vertices, points, denominator=1):
    """
    Classify points against a lattice polygon with exact integer arithmetic.
    Points are given as integer numerators over a common positive denominator.
    Returns +1 inside, 0 on the boundary, -1 outside.
    """
    v = np.asarray(vertices, dtype=np.int64) * int(denominator)
    p = np.atleast_2d(np.asarray(points, dtype=np.int64))
    result = np.empty(len(p), dtype=np.int64)

    x1, y1 = v[:, 0], v[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    chunk = max(1, 4_000_000 // max(len(v), 1))
    for start in range(0, len(p), chunk):
        px = p[start:start + chunk, 0:1]
        py = p[start:start + chunk, 1:2]
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        within = ((np.minimum(x1, x2) <= px) & (px <= np.maximum(x1, x2))
                  & (np.minimum(y1, y2) <= py) & (py <= np.maximum(y1, y2)))
        on_edge = ((cross == 0) & within).any(axis=1)

        straddle = (y1 > py) != (y2 > py)
        # x-coordinate of the crossing lies right of px, sign-corrected by the edge direction
        right = np.where(y2 > y1, cross > 0, cross < 0)
        inside = (straddle & right).sum(axis=1) % 2 == 1

        res = np.where(inside, 1, -1)
        res[on_edge] = 0
        result[start:start + chunk] = res
    return result


def inside_on_row(vertices, xs, y, denominator=1):
    """
    Exact even-odd test for points (xs[i], y) / denominator sharing one row.
    Only edges straddling the row take part; points must not lie on the boundary.
    """
    v = np.asarray(vertices, dtype=np.int64) * int(denominator)
    x1, y1 = v[:, 0], v[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    straddle = (y1 > y) != (y2 > y)
    x1, y1, x2, y2 = x1[straddle], y1[straddle], x2[straddle], y2[straddle]
    px = np.asarray(xs, dtype=np.int64)[:, None]
    cross = (x2 - x1) * (y - y1) - (y2 - y1) * (px - x1)
    right = np.where(y2 > y1, cross > 0, cross < 0)
    return right.sum(axis=1) % 2 == 1


def _orient(ax, ay, bx, by, cx, cy):
    val = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (val > 0) - (val < 0)


def _on_segment(ax, ay, bx, by, cx, cy):
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


def _segments_touch(p1, p2, q1, q2):
    o1 = _orient(*p1, *p2, *q1)
    o2 = _orient(*p1, *p2, *q2)
    o3 = _orient(*q1, *q2, *p1)
    o4 = _orient(*q1, *q2, *p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(*p1, *p2, *q1):
        return True
    if o2 == 0 and _on_segment(*p1, *p2, *q2):
        return True
    if o3 == 0 and _on_segment(*q1, *q2, *p1):
        return True
    if o4 == 0 and _on_segment(*q1, *q2, *p2):
        return True
    return False


def find_crossings(vertices):
    """
    Exact pairwise segment test, bucketed on a uniform grid of the largest edge
    extent. Adjacent edges may only share their common endpoint.
    Returns the list of offending edge index pairs.
    """
    v = [tuple(int(c) for c in row) for row in np.asarray(vertices, dtype=np.int64)]
    n = len(v)
    segs = [(v[i], v[(i + 1) % n]) for i in range(n)]
    cell = max(max(abs(b[0] - a[0]), abs(b[1] - a[1])) for a, b in segs) or 1

    buckets = {}
    for i, (a, b) in enumerate(segs):
        for cx in range(min(a[0], b[0]) // cell, max(a[0], b[0]) // cell + 1):
            for cy in range(min(a[1], b[1]) // cell, max(a[1], b[1]) // cell + 1):
                buckets.setdefault((cx, cy), []).append(i)

    bad = set()
    for members in buckets.values():
        for ii in range(len(members)):
            for jj in range(ii + 1, len(members)):
                i, k = members[ii], members[jj]
                if (i, k) in bad:
                    continue
                p1, p2 = segs[i]
                q1, q2 = segs[k]
                if k == (i + 1) % n or i == (k + 1) % n:
                    # consecutive edges: fold-back is the only possible fault
                    first, second = (segs[i], segs[k]) if k == (i + 1) % n else (segs[k], segs[i])
                    a, b = first
                    c = second[1]
                    if _orient(*a, *b, *c) == 0 and (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]) < 0:
                        bad.add((min(i, k), max(i, k)))
                    continue
                if _segments_touch(p1, p2, q1, q2):
                    bad.add((min(i, k), max(i, k)))
    return sorted(bad)


def is_simple(polygon):
    """
    True when the polygon boundary does not intersect itself. For lattice polygons
    whose edges are single lattice steps this reduces to distinct vertices, since
    lattice edges can only meet at lattice nodes.
    """
    if not polygon.lattice:
        raise GeometryError("Exact simplicity test needs a lattice polygon")
    v = polygon.vertices
    steps = np.roll(v, -1, axis=0) - v
    if polygon.family == 'koch':
        unit_steps = {(1, 0), (-1, 0), (0, 1), (0, -1), (-1, 1), (1, -1)}
    else:
        unit_steps = {(1, 0), (-1, 0), (0, 1), (0, -1)}
    if all(tuple(int(c) for c in s) in unit_steps for s in steps):
        return len(np.unique(v, axis=0)) == len(v)
    return not find_crossings(v)


# =============================================================================
# EXPORT
# =============================================================================

def write_polygon_csv(polygon, path):
    """Write vertices (physical units, CCW) as CSV plus a key=value sidecar"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, polygon.physical_vertices(), delimiter=',', header='x,y', comments='', fmt='%.17g')
    sidecar = path.with_suffix('.meta.txt')
    with open(sidecar, 'w') as f:
        for key, value in polygon.metadata().items():
            f.write(f"{key}={value}\n")
    logger.info(f"📄 Polygon written to {path} ({polygon.n_vertices} vertices)")
    return path, sidecar
