#!/usr/bin/env python3
"""
Lattice Mesh & DOF Map
Embeds a lattice prefractal in a uniformly meshed parallelogram, marks the active
triangles and builds the P1/P0 degree-of-freedom numbering with the restriction map B

Parallelogram numbering (size N~ = (Nx-1)(Ny-1) + 2 Nx Ny):
    interior nodes (i, j), i = 1..Nx-1, j = 1..Ny-1  ->  (i-1)(Ny-1) + (j-1)
    up triangles   (a, b)                            ->  n_par_nodes + a Ny + b
    down triangles (a, b)                            ->  n_par_nodes + Nx Ny + a Ny + b
Screen numbering keeps the same order restricted to active entries.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from errors import MeshError
from geometry import inside_on_row

logger = logging.getLogger(__name__)

NODE, UP, DOWN = 0, 1, 2
KIND_NAMES = ('node', 'up', 'down')

# local vertex offsets (lattice units) of the two reference cells
CELL_VERTICES = {
    UP: np.array([[0, 0], [1, 0], [0, 1]]),
    DOWN: np.array([[1, 0], [1, 1], [0, 1]]),
}

# triangles incident to a node: (kind, cell offset from node, local vertex index)
NODE_STAR = (
    (UP, (0, 0), 0),
    (UP, (-1, 0), 1),
    (UP, (0, -1), 2),
    (DOWN, (-1, 0), 0),
    (DOWN, (-1, -1), 1),
    (DOWN, (0, -1), 2),
)


@dataclass(frozen=True, eq=False)
class LatticeMesh:
    """Uniform parallelogram triangulation with active-cell masks"""

    family: str
    theta: float
    pitch: Fraction
    nx: int
    ny: int
    origin: tuple[int, int]     # lattice coordinates of local cell (0, 0)
    up_mask: np.ndarray         # (nx, ny) bool
    down_mask: np.ndarray       # (nx, ny) bool
    level: int | None = None
    refinement: int = 1

    @property
    def e1(self):
        return float(self.pitch) * np.array([1.0, 0.0])

    @property
    def e2(self):
        return float(self.pitch) * np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def rx(self):
        return self.nx * float(self.pitch)

    @property
    def ry(self):
        return self.ny * float(self.pitch)

    @property
    def h(self):
        """Diameter of the reference triangles"""
        up = self.reference_triangle(UP)
        return float(max(np.linalg.norm(up[i] - up[(i + 1) % 3]) for i in range(3)))

    @property
    def cell_area(self):
        """Area of one lattice triangle"""
        e1, e2 = self.e1, self.e2
        return 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])

    @property
    def origin_xy(self):
        return self.origin[0] * self.e1 + self.origin[1] * self.e2

    @property
    def n_active(self):
        return int(self.up_mask.sum() + self.down_mask.sum())

    def lattice_to_xy(self, ab):
        """Physical coordinates of local lattice points (..., 2)"""
        ab = np.asarray(ab, dtype=float)
        return self.origin_xy + ab[..., 0:1] * self.e1 + ab[..., 1:2] * self.e2

    def reference_triangle(self, kind):
        """Vertices of the kind's triangle at cell (0, 0) relative to its lattice corner"""
        return CELL_VERTICES[kind] @ np.stack([self.e1, self.e2])

    def triangle_vertices(self, kind, cells):
        """Physical vertices (n, 3, 2) of cells given as local (a, b) rows"""
        cells = np.atleast_2d(np.asarray(cells))
        return self.lattice_to_xy(cells[:, None, :] + CELL_VERTICES[kind][None, :, :])

    def active_cells(self, kind):
        mask = self.up_mask if kind == UP else self.down_mask
        return np.argwhere(mask)

    def node_mask(self):
        """(nx-1, ny-1) mask of interior nodes whose six incident triangles are all active"""
        nx, ny = self.nx, self.ny
        if nx < 2 or ny < 2:
            return np.zeros((max(nx - 1, 0), max(ny - 1, 0)), dtype=bool)
        mask = np.ones((nx - 1, ny - 1), dtype=bool)
        i = np.arange(1, nx)[:, None]
        j = np.arange(1, ny)[None, :]
        for kind, (da, db), _ in NODE_STAR:
            cells = self.up_mask if kind == UP else self.down_mask
            mask &= cells[i + da, j + db]
        return mask


def _check_pitch(polygon):
    base = 3 if polygon.family == 'koch' else 4
    expected = Fraction(1, base ** polygon.level)
    if polygon.pitch != expected:
        raise MeshError(f"Declared pitch {polygon.pitch} does not match level {polygon.level} "
                        f"lattice units ({expected})")


def build_lattice(polygon, m=1):
    """
    Tight bounding parallelogram of a lattice polygon, refined m times, with a
    one-cell margin. A cell is active iff its centroid lies inside the polygon.
    """
    if not polygon.lattice:
        raise MeshError(f"Polygon family={polygon.family} beta={polygon.beta} is not lattice-conforming")
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool) or m < 1:
        raise MeshError(f"Refinement must be a positive integer, got {m!r}")
    _check_pitch(polygon)

    verts = np.asarray(polygon.vertices, dtype=np.int64) * int(m)
    amin, bmin = verts.min(axis=0)
    amax, bmax = verts.max(axis=0)
    a0, b0 = int(amin) - 1, int(bmin) - 1
    nx, ny = int(amax - amin) + 2, int(bmax - bmin) + 2

    up = np.zeros((nx, ny), dtype=bool)
    down = np.zeros((nx, ny), dtype=bool)
    a_glob = a0 + np.arange(nx)
    # centroids scaled by 3: up (3a+1, 3b+1), down (3a+2, 3b+2); never on the boundary
    for b in range(ny):
        bg = b0 + b
        up[:, b] = inside_on_row(verts, 3 * a_glob + 1, 3 * bg + 1, denominator=3)
        down[:, b] = inside_on_row(verts, 3 * a_glob + 2, 3 * bg + 2, denominator=3)

    theta = math.pi / 3.0 if polygon.family == 'koch' else math.pi / 2.0
    mesh = LatticeMesh(polygon.family, theta, polygon.pitch / m, nx, ny, (a0, b0), up, down,
                       polygon.level, int(m))
    logger.info(f"🧱 Lattice {nx}x{ny} (h={mesh.h:.4g}): {int(up.sum())} up + {int(down.sum())} down active")
    return mesh


def full_parallelogram(nx, ny, family='koch', pitch=Fraction(1)):
    """Every cell of an nx by ny parallelogram active"""
    if nx < 1 or ny < 1:
        raise MeshError(f"Parallelogram needs positive sizes, got {nx}x{ny}")
    theta = math.pi / 3.0 if family == 'koch' else math.pi / 2.0
    ones = np.ones((nx, ny), dtype=bool)
    return LatticeMesh(family, theta, Fraction(pitch), nx, ny, (0, 0), ones, ones.copy())


@dataclass(frozen=True, eq=False)
class DofMap:
    """Active P1 nodes and P0 triangles, indexed in parallelogram and screen order"""

    nx: int
    ny: int
    node_mask: np.ndarray
    up_mask: np.ndarray
    down_mask: np.ndarray
    par_index: np.ndarray       # (N,) parallelogram index of each screen DOF
    screen_index: np.ndarray    # (N~,) screen index or -1
    B: sp.csr_matrix            # (N~, N) restriction map

    @property
    def n_nodes(self):
        return int(self.node_mask.sum())

    @property
    def n_up(self):
        return int(self.up_mask.sum())

    @property
    def n_down(self):
        return int(self.down_mask.sum())

    @property
    def n_triangles(self):
        return self.n_up + self.n_down

    @property
    def n_dofs(self):
        return len(self.par_index)

    @property
    def n_par_nodes(self):
        return max(self.nx - 1, 0) * max(self.ny - 1, 0)

    @property
    def n_par(self):
        return self.n_par_nodes + 2 * self.nx * self.ny

    def block_slices(self):
        """Screen slices of the node, up and down DOFs"""
        n0, n1 = self.n_nodes, self.n_up
        return slice(0, n0), slice(n0, n0 + n1), slice(n0 + n1, self.n_dofs)

    def par_block_slices(self):
        n0, nc = self.n_par_nodes, self.nx * self.ny
        return slice(0, n0), slice(n0, n0 + nc), slice(n0 + nc, n0 + 2 * nc)

    def node_coords(self):
        """Local lattice coordinates (i, j) of active nodes, screen order"""
        return np.argwhere(self.node_mask) + 1

    def up_cells(self):
        return np.argwhere(self.up_mask)

    def down_cells(self):
        return np.argwhere(self.down_mask)

    def scatter(self, v):
        """B v: screen vector to parallelogram vector"""
        return self.B @ v

    def gather(self, w):
        """B^T w"""
        return self.B.T @ w


def build_dof_map(mesh):
    """Number active nodes and triangles and build the restriction map to the screen"""
    node_mask = mesh.node_mask()
    n_par_nodes = node_mask.size
    n_cells = mesh.nx * mesh.ny
    par_index = np.concatenate([
        np.flatnonzero(node_mask.ravel()),
        n_par_nodes + np.flatnonzero(mesh.up_mask.ravel()),
        n_par_nodes + n_cells + np.flatnonzero(mesh.down_mask.ravel()),
    ]).astype(np.int64)

    n_par = n_par_nodes + 2 * n_cells
    n = len(par_index)
    screen_index = np.full(n_par, -1, dtype=np.int64)
    screen_index[par_index] = np.arange(n)
    B = sp.csr_matrix((np.ones(n), (par_index, np.arange(n))), shape=(n_par, n))

    dofs = DofMap(mesh.nx, mesh.ny, node_mask, mesh.up_mask, mesh.down_mask, par_index, screen_index, B)
    logger.info(f"🧱 DOFs: {dofs.n_nodes} nodes + {dofs.n_triangles} triangles = {n} (parallelogram {n_par})")
    return dofs


def mesh_summary(mesh, dofs, polygon=None):
    summary = {
        'family': mesh.family,
        'level': mesh.level,
        'refinement': mesh.refinement,
        'theta': mesh.theta,
        'pitch': str(mesh.pitch),
        'h': mesh.h,
        'nx': mesh.nx,
        'ny': mesh.ny,
        'n_up': dofs.n_up,
        'n_down': dofs.n_down,
        'n_nodes': dofs.n_nodes,
        'n_dofs': dofs.n_dofs,
        'n_par': dofs.n_par,
        'active_area': mesh.n_active * mesh.cell_area,
    }
    if polygon is not None:
        summary['edges'] = polygon.n_edges
        summary['polygon_area'] = polygon.area()
    return summary


def write_wireframe_csv(mesh, path):
    """One row per active triangle: kind,a,b,x0,y0,x1,y1,x2,y2"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in (UP, DOWN):
        cells = mesh.active_cells(kind)
        if len(cells) == 0:
            continue
        xy = mesh.triangle_vertices(kind, cells).reshape(len(cells), 6)
        for (a, b), coords in zip(cells, xy):
            rows.append(f"{KIND_NAMES[kind]},{a},{b}," + ','.join(f"{c:.17g}" for c in coords))
    with open(path, 'w') as f:
        f.write('kind,a,b,x0,y0,x1,y1,x2,y2\n')
        f.write('\n'.join(rows))
        if rows:
            f.write('\n')
    logger.info(f"📄 Wireframe written to {path} ({len(rows)} triangles)")
    return path


def save_mesh(mesh, path):
    """Masks and lattice parameters as .npz"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, up_mask=mesh.up_mask, down_mask=mesh.down_mask,
             origin=np.array(mesh.origin), shape=np.array([mesh.nx, mesh.ny]),
             pitch=np.array([mesh.pitch.numerator, mesh.pitch.denominator]),
             theta=mesh.theta, family=mesh.family,
             level=-1 if mesh.level is None else mesh.level, refinement=mesh.refinement)
    return path


def load_mesh(path):
    """Rebuild a LatticeMesh written by save_mesh"""
    with np.load(path) as data:
        level = int(data['level'])
        return LatticeMesh(str(data['family']), float(data['theta']),
                           Fraction(int(data['pitch'][0]), int(data['pitch'][1])),
                           int(data['shape'][0]), int(data['shape'][1]),
                           tuple(int(c) for c in data['origin']),
                           data['up_mask'].astype(bool), data['down_mask'].astype(bool),
                           None if level < 0 else level, int(data['refinement']))
