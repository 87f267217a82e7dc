#!/usr/bin/env python3
"""
Galerkin Assembly
Impedance screen system on the lattice: P1 hats for the Dirichlet jump, P0
constants for the Neumann jump.

Block structure (rows tested, columns trial):
    [ -c0 M11 - T      c1 M10        ]
    [  c2 M01          M00 - cS S    ]
c0 = l+ l- / (l+ + l-), c1 = (l+ - l-) / (2 (l+ + l-)), c2 = (l+ - l-) / 2, cS = l+ + l-.
The hypersingular block uses the integration-by-parts form
    <-T phi_q, phi_p> = int int Phi(x, y) [grad phi_q(y) . grad phi_p(x) - k^2 phi_q(y) phi_p(x)]
so every entry is a weighted sum of triangle-pair moments.
"""

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import config
from errors import AssemblyError
from mesh import CELL_VERTICES, DOWN, NODE, NODE_STAR, UP
from quadrature import (barycentric_gradients, pair_moments, reference_barycentric,
                        regular_moments, triangle_rule, twice_area)

logger = logging.getLogger(__name__)

KINDS = (NODE, UP, DOWN)
TRIANGLE_KINDS = (UP, DOWN)
# moment tables actually integrated; (DOWN, UP) follows by symmetry
COMPUTED_PAIRS = ((UP, UP), (UP, DOWN), (DOWN, DOWN))
REGULAR_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class ImpedanceParams:
    """Impedances on the two sides; scalars (fast path) or one value per active triangle"""

    lambda_plus: complex | np.ndarray
    lambda_minus: complex | np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.lambda_plus, dtype=complex)
        lm = np.asarray(self.lambda_minus, dtype=complex)
        if np.any(lp.imag < 0) or np.any(lm.imag < 0):
            raise AssemblyError("Impedances must have nonnegative imaginary part")
        if np.any(np.abs(lp + lm) == 0):
            raise AssemblyError("lambda_plus + lambda_minus must not vanish")

    @property
    def is_constant(self):
        return np.ndim(self.lambda_plus) == 0 and np.ndim(self.lambda_minus) == 0

    def _pm(self):
        return np.asarray(self.lambda_plus, dtype=complex), np.asarray(self.lambda_minus, dtype=complex)

    @property
    def c0(self):
        lp, lm = self._pm()
        return _scalar(lp * lm / (lp + lm))

    @property
    def c1(self):
        lp, lm = self._pm()
        return _scalar(0.5 * (lp - lm) / (lp + lm))

    @property
    def c2(self):
        lp, lm = self._pm()
        return _scalar(0.5 * (lp - lm))

    @property
    def cS(self):
        lp, lm = self._pm()
        return _scalar(lp + lm)

    def per_triangle(self, n):
        """Coefficient arrays of length n"""
        def spread(c):
            c = np.asarray(c, dtype=complex)
            if c.ndim == 0:
                return np.full(n, complex(c))
            if c.shape != (n,):
                raise AssemblyError(f"Per-element impedance has {c.shape[0]} entries, mesh has {n} triangles")
            return c
        return spread(self.c0), spread(self.c1), spread(self.c2), spread(self.cS)

    def describe(self):
        if not self.is_constant:
            return {'per_element': True}
        lp, lm = complex(self.lambda_plus), complex(self.lambda_minus)
        return {'lambda_plus': [lp.real, lp.imag], 'lambda_minus': [lm.real, lm.imag]}


def _scalar(c):
    return complex(c) if np.ndim(c) == 0 else c


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave exp(i k d.x); the screen normal is +e3"""

    k: float
    d: tuple[float, float, float]

    def __post_init__(self):
        if not self.k > 0:
            raise AssemblyError(f"Incident wavenumber must be positive, got {self.k}")
        norm = math.sqrt(sum(c * c for c in self.d))
        if norm == 0 or not math.isfinite(norm):
            raise AssemblyError("Incident direction must be a finite non-zero vector")
        if abs(norm - 1.0) > 1e-12:
            object.__setattr__(self, 'd', tuple(float(c) / norm for c in self.d))

    def trace(self, xy):
        """u^i restricted to the screen plane"""
        xy = np.asarray(xy)
        return np.exp(1j * self.k * (self.d[0] * xy[..., 0] + self.d[1] * xy[..., 1]))

    def normal_derivative(self, xy):
        return 1j * self.k * self.d[2] * self.trace(xy)

    def field(self, xyz):
        xyz = np.asarray(xyz)
        return np.exp(1j * self.k * (xyz @ np.asarray(self.d)))


@dataclass(frozen=True, eq=False)
class OperatorBlocks:
    """Nine generating arrays of the parallelogram operator, keyed by (row kind, column kind)"""

    generating: dict
    k: float
    impedance: ImpedanceParams
    nx: int
    ny: int
    quadrature: object
    meta: dict = field(default_factory=dict)

    def row_shape(self, kind):
        return (self.nx - 1, self.ny - 1) if kind == NODE else (self.nx, self.ny)

    def offset_min(self, row, col):
        """Lattice offset (pos_col - pos_row) stored at index (0, 0) of a generating array"""
        r_start = 1 if row == NODE else 0
        c_start = 1 if col == NODE else 0
        rx, ry = self.row_shape(row)
        return (c_start - r_start - (rx - 1), c_start - r_start - (ry - 1))

    def entry(self, row, col, delta):
        dmin = self.offset_min(row, col)
        return self.generating[(row, col)][delta[0] - dmin[0], delta[1] - dmin[1]]

    def n_entries(self):
        return sum(g.size for g in self.generating.values())


# =============================================================================
# LATTICE HELPERS
# =============================================================================

def _basis(mesh):
    return np.stack([mesh.e1, mesh.e2])


def _cell_triangle(mesh, kind, shift=(0, 0)):
    """Triangle of a kind at a lattice shift from the local origin, in origin-relative coordinates"""
    return (CELL_VERTICES[kind] + np.asarray(shift)) @ _basis(mesh)


def singular_window(mesh, cfg):
    """
    Offsets with max(|da|, |db|) below this may be singular or near pairs and go
    through pair_moments; everything farther is regular.
    """
    pitch = float(mesh.pitch)
    return int(math.ceil(1.0 + cfg.separation_ratio * mesh.h / (pitch * math.sin(mesh.theta))))


def _moment_table(mesh, s, t, k, cfg, threads):
    """M[s][t] for every offset in [-(nx-1), nx-1] x [-(ny-1), ny-1]; array (2nx-1, 2ny-1, 3, 3)"""
    nx, ny = mesh.nx, mesh.ny
    da = np.arange(-(nx - 1), nx)
    db = np.arange(-(ny - 1), ny)
    table = np.zeros((len(da), len(db), 3, 3), dtype=complex)
    window = singular_window(mesh, cfg)

    tri_s = _cell_triangle(mesh, s)
    tri_t = _cell_triangle(mesh, t)
    basis = _basis(mesh)

    A, Bm = np.meshgrid(da, db, indexing='ij')
    near = (np.abs(A) < window) & (np.abs(Bm) < window)
    for ia, ib in np.argwhere(near):
        table[ia, ib] = pair_moments(tri_s, _cell_triangle(mesh, t, (da[ia], db[ib])), k, cfg).values

    far = np.argwhere(~near)
    shifts = np.stack([da[far[:, 0]], db[far[:, 1]]], axis=1) @ basis if len(far) else np.zeros((0, 2))

    def work(lo):
        hi = min(lo + REGULAR_CHUNK, len(far))
        tris = tri_t[None, :, :] + shifts[lo:hi, None, :]
        return lo, hi, regular_moments(tri_s, tris, k, cfg.regular_order)

    starts = range(0, len(far), REGULAR_CHUNK)
    if threads > 1 and len(far) > REGULAR_CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(lo) for lo in starts]
    for lo, hi, vals in results:
        idx = far[lo:hi]
        table[idx[:, 0], idx[:, 1]] = vals
    return table


def moment_tables(mesh, k, cfg, threads=1):
    """Moment tables for the four triangle-kind pairs"""
    tables = {pair: _moment_table(mesh, *pair, k, cfg, threads) for pair in COMPUTED_PAIRS}
    # M[down][up](D) = M[up][down](-D)^T
    tables[(DOWN, UP)] = np.transpose(tables[(UP, DOWN)][::-1, ::-1], (0, 1, 3, 2))
    return tables


def _grads(mesh):
    return {kind: barycentric_gradients(_cell_triangle(mesh, kind)) for kind in TRIANGLE_KINDS}


# =============================================================================
# GENERATING ARRAYS
# =============================================================================

def assemble_generating_blocks(mesh, dofs, k, impedance, cfg, threads=1, cache_dir=None):
    """Nine generating arrays of the parallelogram operator (constant impedance only)"""
    if not impedance.is_constant:
        raise AssemblyError("The FFT path needs constant impedances; use assemble_dense for per-element values")
    if k < 0:
        raise AssemblyError(f"Wavenumber must be nonnegative, got {k}")

    cache_dir = cache_dir if cache_dir is not None else config.CACHE_DIR
    key = generating_key(mesh, k, impedance, cfg)
    if cache_dir:
        cached = load_generating(cache_dir, key)
        if cached is not None:
            logger.info(f"📦 Generating arrays loaded from cache ({key[:12]})")
            return OperatorBlocks(cached, k, impedance, mesh.nx, mesh.ny, cfg, {'key': key})

    logger.info(f"🧮 Assembling generating arrays on {mesh.nx}x{mesh.ny} lattice (k={k})")
    nx, ny = mesh.nx, mesh.ny
    tables = moment_tables(mesh, k, cfg, threads)
    sums = {pair: tab.sum(axis=(2, 3)) for pair, tab in tables.items()}
    grads = _grads(mesh)
    area = mesh.cell_area
    c0, c1, c2, cS = impedance.c0, impedance.c1, impedance.c2, impedance.cS
    ox, oy = nx - 1, ny - 1   # table index of offset (0, 0)

    G = {}

    # node-node: offsets in [-(nx-2), nx-2]
    nn = np.zeros((max(2 * nx - 3, 0), max(2 * ny - 3, 0)), dtype=complex)
    if nn.size:
        for s, cs, alpha in NODE_STAR:
            for t, ct, beta in NODE_STAR:
                sx = ox - (nx - 2) + ct[0] - cs[0]
                sy = oy - (ny - 2) + ct[1] - cs[1]
                win = (slice(sx, sx + nn.shape[0]), slice(sy, sy + nn.shape[1]))
                gg = float(grads[s][alpha] @ grads[t][beta])
                nn += gg * sums[(s, t)][win] - k * k * tables[(s, t)][win + (alpha, beta)]
                # P1 mass on common triangles: offset (cs - ct) is the only one sharing a cell
                if s == t:
                    d = (cs[0] - ct[0] + nx - 2, cs[1] - ct[1] + ny - 2)
                    nn[d] -= c0 * area / 12.0 * (2.0 if alpha == beta else 1.0)
    G[(NODE, NODE)] = nn

    # triangle-triangle: offsets in [-(nx-1), nx-1]
    for s in TRIANGLE_KINDS:
        for t in TRIANGLE_KINDS:
            tt = -cS * sums[(s, t)]
            if s == t:
                tt[ox, oy] += area
            G[(s, t)] = tt

    # node-triangle: offsets (cell - node) in [-(nx-1), nx-2]; triangle-node: [-(nx-2), nx-1]
    for t in TRIANGLE_KINDS:
        nt = np.zeros((2 * nx - 2, 2 * ny - 2), dtype=complex)
        tn = np.zeros((2 * nx - 2, 2 * ny - 2), dtype=complex)
        for kind, cs, _ in NODE_STAR:
            if kind != t:
                continue
            nt[cs[0] + nx - 1, cs[1] + ny - 1] += c1 * area / 3.0
            tn[-cs[0] + nx - 2, -cs[1] + ny - 2] += c2 * area / 3.0
        G[(NODE, t)] = nt
        G[(t, NODE)] = tn

    blocks = OperatorBlocks(G, k, impedance, nx, ny, cfg, {'key': key})
    if cache_dir:
        save_generating(cache_dir, key, G)
    logger.info(f"✅ Generating arrays ready ({blocks.n_entries()} entries)")
    return blocks


def generating_key(mesh, k, impedance, cfg):
    """Content hash of everything the generating arrays depend on"""
    payload = {
        'nx': mesh.nx, 'ny': mesh.ny,
        'pitch': [mesh.pitch.numerator, mesh.pitch.denominator],
        'theta': repr(mesh.theta),
        'k': repr(float(k)),
        'lambda_plus': repr(complex(impedance.lambda_plus)),
        'lambda_minus': repr(complex(impedance.lambda_minus)),
        'quadrature': [cfg.regular_order, cfg.singular_order, repr(cfg.separation_ratio)],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_generating(cache_dir, key, generating):
    path = Path(cache_dir) / f"generating_{key}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **{f"G_{r}_{c}": g for (r, c), g in generating.items()})
    logger.info(f"📦 Generating arrays cached at {path}")
    return path


def load_generating(cache_dir, key):
    path = Path(cache_dir) / f"generating_{key}.npz"
    if not path.exists():
        return None
    try:
        with np.load(path) as data:
            return {(int(name.split('_')[1]), int(name.split('_')[2])): data[name] for name in data.files}
    except Exception as e:
        logger.warning(f"⚠️ Ignoring unreadable cache file {path}: {str(e)}")
        return None


# =============================================================================
# DENSE ORACLE
# =============================================================================

def active_triangles(mesh, dofs):
    """Kinds (n,), local cells (n, 2), origin-relative vertices (n, 3, 2) in screen order"""
    cells = np.concatenate([dofs.up_cells(), dofs.down_cells()])
    kinds = np.concatenate([np.full(dofs.n_up, UP), np.full(dofs.n_down, DOWN)])
    basis = _basis(mesh)
    verts = np.stack([(CELL_VERTICES[kd] + c) @ basis for kd, c in zip(kinds, cells)]) \
        if len(cells) else np.zeros((0, 3, 2))
    return kinds, cells, verts


def triangle_nodes(dofs, kinds, cells):
    """Screen index of each triangle's vertex node, -1 where the node is not a DOF"""
    nx, ny = dofs.nx, dofs.ny
    out = np.full((len(kinds), 3), -1, dtype=np.int64)
    for n, (kind, (a, b)) in enumerate(zip(kinds, cells)):
        for alpha, (da, db) in enumerate(CELL_VERTICES[kind]):
            i, j = a + da, b + db
            if 1 <= i <= nx - 1 and 1 <= j <= ny - 1:
                out[n, alpha] = dofs.screen_index[(i - 1) * (ny - 1) + (j - 1)]
    return out


def _dense_moment_row(p, kinds, cells, verts, k, cfg, window):
    """Moments M(T_p, T_q) against every active triangle, (n, 3, 3)"""
    n = len(kinds)
    row = np.zeros((n, 3, 3), dtype=complex)
    offsets = cells - cells[p]
    near = np.max(np.abs(offsets), axis=1) < window
    for q in np.flatnonzero(near):
        # the (down, up) orientation is always taken as the transpose of (up, down)
        if kinds[p] == DOWN and kinds[q] == UP:
            row[q] = pair_moments(verts[q], verts[p], k, cfg).values.T
        else:
            row[q] = pair_moments(verts[p], verts[q], k, cfg).values
    far = np.flatnonzero(~near)
    if len(far):
        swap = far[(kinds[far] == UP) & (kinds[p] == DOWN)]
        keep = far[~((kinds[far] == UP) & (kinds[p] == DOWN))]
        if len(keep):
            row[keep] = regular_moments(verts[p], verts[keep], k, cfg.regular_order)
        if len(swap):
            vals = regular_moments(verts[swap], verts[p][None], k, cfg.regular_order)
            row[swap] = np.transpose(vals, (0, 2, 1))
    return row


def assemble_dense(mesh, dofs, k, impedance, cfg, max_dofs=None, threads=1):
    """Full Galerkin matrix on the screen DOFs; per-element impedances allowed"""
    max_dofs = max_dofs if max_dofs is not None else config.DENSE_CAP
    n = dofs.n_dofs
    if n > max_dofs:
        raise AssemblyError(f"Dense assembly of {n} DOFs exceeds the cap of {max_dofs} "
                            f"(set SCREEN_BEM_DENSE_CAP to raise it)")

    logger.info(f"🧮 Dense assembly: {n} DOFs")
    kinds, cells, verts = active_triangles(mesh, dofs)
    n_tri = len(kinds)
    c0, c1, c2, cS = impedance.per_triangle(n_tri)
    tri_nodes = triangle_nodes(dofs, kinds, cells)
    grads = _grads(mesh)
    g = np.stack([grads[kd] for kd in kinds]) if n_tri else np.zeros((0, 3, 2))
    areas = 0.5 * twice_area(verts) if n_tri else np.zeros(0)
    window = singular_window(mesh, cfg)

    nn = dofs.n_nodes
    A = np.zeros((n, n), dtype=complex)

    def row_block(p):
        return p, _dense_moment_row(p, kinds, cells, verts, k, cfg, window)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = pool.map(row_block, range(n_tri))
            _accumulate(A, rows, nn, tri_nodes, g, k, cS)
    else:
        _accumulate(A, (row_block(p) for p in range(n_tri)), nn, tri_nodes, g, k, cS)

    # mass terms
    for p in range(n_tri):
        tp = nn + p
        A[tp, tp] += areas[p]
        for alpha in range(3):
            a_node = tri_nodes[p, alpha]
            if a_node < 0:
                continue
            A[a_node, tp] += c1[p] * areas[p] / 3.0
            A[tp, a_node] += c2[p] * areas[p] / 3.0
            for beta in range(3):
                b_node = tri_nodes[p, beta]
                if b_node >= 0:
                    A[a_node, b_node] -= c0[p] * areas[p] / 12.0 * (2.0 if alpha == beta else 1.0)
    logger.info("✅ Dense matrix assembled")
    return A


def _accumulate(A, rows, nn, tri_nodes, g, k, cS):
    for p, row in rows:
        sums = row.sum(axis=(1, 2))
        A[nn + p, nn:] -= cS[p] * sums
        for alpha in range(3):
            a_node = tri_nodes[p, alpha]
            if a_node < 0:
                continue
            for beta in range(3):
                cols = tri_nodes[:, beta]
                ok = cols >= 0
                if not ok.any():
                    continue
                gg = g[ok, beta] @ g[p, alpha]
                vals = gg * sums[ok] - k * k * row[ok, alpha, beta]
                np.add.at(A[a_node], cols[ok], vals)


# =============================================================================
# RIGHT-HAND SIDE
# =============================================================================

def assemble_rhs(mesh, dofs, inc, impedance, order=4):
    """
    Load vector for a plane wave:
        first row  f1 = i k d3 u^i   against the P1 hats
        second row f2 = -(l+ + l-) u^i against the P0 constants
    """
    kinds, cells, verts = active_triangles(mesh, dofs)
    n_tri = len(kinds)
    b = np.zeros(dofs.n_dofs, dtype=complex)
    if n_tri == 0:
        return b
    _, _, _, cS = impedance.per_triangle(n_tri)
    st, w = triangle_rule(order)
    bary = reference_barycentric(st)
    pts = mesh.origin_xy + verts[:, None, 0, :] + st[None, :, 0:1] * (verts[:, None, 1, :] - verts[:, None, 0, :]) \
        + st[None, :, 1:2] * (verts[:, None, 2, :] - verts[:, None, 0, :])
    wq = w[None, :] * twice_area(verts)[:, None]
    trace = inc.trace(pts)

    nn = dofs.n_nodes
    b[nn:] = -cS * (wq * trace).sum(axis=1)

    f1 = wq * inc.normal_derivative(pts)
    local = f1 @ bary                                  # (n_tri, 3)
    tri_nodes = triangle_nodes(dofs, kinds, cells)
    ok = tri_nodes >= 0
    np.add.at(b, tri_nodes[ok], local[ok])
    return b
