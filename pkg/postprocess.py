#!/usr/bin/env python3
"""
Field Evaluation & Convergence Study
Scattered field from the representation u = D phi - S psi, cube-face sampling grids,
relative L-infinity errors and the prefractal-to-reference convergence study
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from assembly import IncidentWave, active_triangles, triangle_nodes
from config import FACE_NAMES
from errors import GridError, ScreenBEMError
from quadrature import helmholtz_kernel, reference_barycentric, triangle_rule, twice_area
from solver import solve_prefractal

logger = logging.getLogger(__name__)

PLOTTED_FACES = ('+x', '+y', '-z')
FIELD_CHUNK = 2_000_000

# fixed axis and the two varying axes of each face
FACE_AXES = {
    '+x': (0, +1, (1, 2)), '-x': (0, -1, (1, 2)),
    '+y': (1, +1, (0, 2)), '-y': (1, -1, (0, 2)),
    '+z': (2, +1, (0, 1)), '-z': (2, -1, (0, 1)),
}


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """n x n samples on selected faces of a cube centred on the screen"""

    side: float
    center: np.ndarray
    n: int
    faces: tuple
    points: np.ndarray              # (faces, n, n, 3)
    excluded: np.ndarray            # (faces, n, n) bool
    values: np.ndarray | None = None   # scattered field
    total: np.ndarray | None = None    # scattered + incident

    def with_values(self, values, total=None):
        shape = self.points.shape[:3]
        return replace(self, values=np.asarray(values).reshape(shape),
                       total=None if total is None else np.asarray(total).reshape(shape))

    def face_subset(self, faces):
        return [self.faces.index(f) for f in faces if f in self.faces]


def screen_centroid(mesh, dofs):
    _, _, verts = active_triangles(mesh, dofs)
    if len(verts) == 0:
        raise GridError("Screen has no active triangles")
    return mesh.origin_xy + verts.mean(axis=(0, 1))


def screen_bounds(mesh, dofs):
    _, _, verts = active_triangles(mesh, dofs)
    xy = mesh.origin_xy + verts.reshape(-1, 2)
    return xy.min(axis=0), xy.max(axis=0)


def build_grid(mesh, dofs, side, n, faces=FACE_NAMES, standoff=1e-6, center=None):
    """Cube of side L centred on the screen centroid (z = 0); points too close to the screen are excluded"""
    if side <= 0 or n < 2:
        raise GridError(f"Grid needs side > 0 and n >= 2, got side={side}, n={n}")
    faces = tuple(faces)
    unknown = [f for f in faces if f not in FACE_AXES]
    if unknown or not faces:
        raise GridError(f"Unknown cube faces: {unknown or faces}")
    if center is None:
        cxy = screen_centroid(mesh, dofs)
        center = np.array([cxy[0], cxy[1], 0.0])
    center = np.asarray(center, dtype=float)

    s = np.linspace(-side / 2.0, side / 2.0, n)
    u, v = np.meshgrid(s, s, indexing='ij')
    pts = np.empty((len(faces), n, n, 3))
    for f, name in enumerate(faces):
        axis, sign, (a1, a2) = FACE_AXES[name]
        pts[f, :, :, axis] = center[axis] + sign * side / 2.0
        pts[f, :, :, a1] = center[a1] + u
        pts[f, :, :, a2] = center[a2] + v

    lo, hi = screen_bounds(mesh, dofs)
    excluded = ((np.abs(pts[..., 2]) < standoff)
                & (pts[..., 0] >= lo[0]) & (pts[..., 0] <= hi[0])
                & (pts[..., 1] >= lo[1]) & (pts[..., 1] <= hi[1]))
    if excluded.any():
        logger.warning(f"⚠️ {int(excluded.sum())} grid points within {standoff:g} of the screen are excluded")
    return FieldGrid(side, center, n, faces, pts, excluded)


def _surface_densities(solution, mesh, dofs, order):
    """Quadrature points on the screen with weighted phi_h and psi_h"""
    kinds, cells, verts = active_triangles(mesh, dofs)
    if len(solution.phi) != dofs.n_nodes or len(solution.psi) != dofs.n_triangles:
        raise GridError(f"Solution sizes ({len(solution.phi)}, {len(solution.psi)}) do not match the mesh "
                        f"({dofs.n_nodes}, {dofs.n_triangles})")
    st, w = triangle_rule(order)
    bary = reference_barycentric(st)
    v0 = verts[:, None, 0, :]
    y = mesh.origin_xy + v0 + st[None, :, 0:1] * (verts[:, None, 1, :] - v0) \
        + st[None, :, 1:2] * (verts[:, None, 2, :] - v0)
    wq = w[None, :] * twice_area(verts)[:, None]

    nodes = triangle_nodes(dofs, kinds, cells)
    phi = np.asarray(solution.phi, dtype=complex)
    nodal = np.where(nodes >= 0, phi[np.maximum(nodes, 0)], 0.0) if len(phi) else np.zeros(nodes.shape, complex)
    phi_q = nodal @ bary.T
    dd = (wq * phi_q).ravel()
    ds = (wq * np.asarray(solution.psi, dtype=complex)[:, None]).ravel()
    return y.reshape(-1, 2), dd, ds


def evaluate_field(solution, mesh, dofs, k, points, order=4, threads=1, standoff=1e-6):
    """
    Scattered field u = D phi_h - S psi_h at points (..., 3). Points within the
    standoff of the closed screen are returned as NaN.
    """
    points = np.asarray(points, dtype=float)
    shape = points.shape[:-1]
    pts = points.reshape(-1, 3)
    out = np.full(len(pts), np.nan + 0j)
    if dofs.n_triangles == 0:
        out[:] = 0.0
        return out.reshape(shape)

    lo, hi = screen_bounds(mesh, dofs)
    bad = ((np.abs(pts[:, 2]) < standoff) & (pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0])
           & (pts[:, 1] >= lo[1]) & (pts[:, 1] <= hi[1]))
    if bad.any():
        logger.warning(f"⚠️ {int(bad.sum())} field points within {standoff:g} of the screen excluded")
    good = np.flatnonzero(~bad)

    y, dd, ds = _surface_densities(solution, mesh, dofs, order)
    chunk = max(1, FIELD_CHUNK // len(y))

    def work(lo_idx):
        idx = good[lo_idx:lo_idx + chunk]
        x = pts[idx]
        dx = x[:, None, 0] - y[None, :, 0]
        dy = x[:, None, 1] - y[None, :, 1]
        z = x[:, 2:3]
        r = np.sqrt(dx * dx + dy * dy + z * z)
        phi = helmholtz_kernel(r, k)
        dphi = (-z / r) * (1j * k - 1.0 / r) * phi
        return idx, dphi @ dd - phi @ ds

    starts = range(0, len(good), chunk)
    if threads > 1 and len(good) > chunk:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    for idx, vals in results:
        out[idx] = vals
    return out.reshape(shape)


def evaluate_on_grid(solution, mesh, dofs, k, grid, inc=None, order=4, threads=1):
    values = evaluate_field(solution, mesh, dofs, k, grid.points, order, threads)
    values = np.where(grid.excluded, np.nan, values)
    total = None if inc is None else values + inc.field(grid.points)
    logger.info(f"🌊 Field evaluated on {values.size} points ({len(grid.faces)} faces)")
    return grid.with_values(values, total)


def relative_linf_error(u_test, u_ref, faces=None):
    """max |u_test - u_ref| / max |u_ref| over the (optionally restricted) faces"""
    if u_test.values is None or u_ref.values is None:
        raise GridError("Both grids need field values")
    if (u_test.points.shape != u_ref.points.shape or u_test.faces != u_ref.faces
            or not np.allclose(u_test.points, u_ref.points, rtol=0.0, atol=1e-12)):
        raise GridError("Field grids do not match")
    sel = slice(None) if faces is None else u_ref.face_subset(faces)
    if faces is not None and not sel:
        raise GridError(f"None of the faces {tuple(faces)} are sampled")
    test, ref = u_test.values[sel], u_ref.values[sel]
    ok = np.isfinite(test) & np.isfinite(ref)
    scale = np.max(np.abs(ref[ok])) if ok.any() else 0.0
    if scale == 0.0:
        raise GridError("Reference field vanishes on the grid")
    return float(np.max(np.abs(test[ok] - ref[ok])) / scale)


def convergence_study(family, j_max, j_ref, k_list, impedance, direction, grid_cfg, quadrature, gmres_cfg,
                      beta=None, refinement=1, j_min=1, threads=1, mode='fast', csv_path=None):
    """
    Errors of levels j_min..j_max against the level j_ref solution on one shared grid.
    impedance is an ImpedanceParams or a callable k -> ImpedanceParams.
    Rows carry k, j, h, error, error_three_face, iterations, seconds, converged.
    """
    if j_ref <= j_max:
        raise GridError(f"Reference level {j_ref} must exceed j_max {j_max}")
    levels = list(range(min(j_min, j_max), j_max + 1))
    rows = []
    for k in k_list:
        lam = impedance(k) if callable(impedance) else impedance
        inc = IncidentWave(k, tuple(direction))
        logger.info(f"📊 Study k={k}: reference level {j_ref}, levels {levels}")

        def run(level):
            return solve_prefractal(family, level, k, direction, lam, quadrature, gmres_cfg,
                                    beta=beta, refinement=refinement, mode=mode, threads=threads)

        ref = run(j_ref)
        grid = build_grid(ref.mesh, ref.dofs, grid_cfg.side, grid_cfg.n, grid_cfg.faces, grid_cfg.standoff)
        ref_grid = evaluate_on_grid(ref.solution, ref.mesh, ref.dofs, k, grid, inc, threads=threads)

        for j in levels:
            start = time.perf_counter()
            try:
                res = run(j)
                test_grid = evaluate_on_grid(res.solution, res.mesh, res.dofs, k, grid, inc, threads=threads)
                error = relative_linf_error(test_grid, ref_grid)
                try:
                    error3 = relative_linf_error(test_grid, ref_grid, PLOTTED_FACES)
                except GridError:
                    error3 = math.nan
                row = {'k': k, 'j': j, 'h': res.mesh.h, 'error': error, 'error_three_face': error3,
                       'iterations': res.solution.iterations, 'seconds': time.perf_counter() - start,
                       'converged': res.solution.converged}
                logger.info(f"📊 k={k} j={j}: error {error:.3e} (three faces {error3:.3e})")
            except ScreenBEMError as e:
                logger.error(f"❌ Study row k={k} j={j} failed: {str(e)}")
                row = {'k': k, 'j': j, 'h': math.nan, 'error': math.nan, 'error_three_face': math.nan,
                       'iterations': 0, 'seconds': time.perf_counter() - start, 'converged': False}
            rows.append(row)

    if csv_path is not None:
        write_study_csv(rows, csv_path)
    logger.info(f"🎉 Study complete: {len(rows)} rows")
    return rows


# =============================================================================
# CSV OUTPUT
# =============================================================================

def write_field_csv(grid, path):
    """face,ix,iy,x,y,z,re_u,im_u,re_total,im_total"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = grid.values if grid.values is not None else np.full(grid.points.shape[:3], np.nan + 0j)
    total = grid.total if grid.total is not None else np.full(grid.points.shape[:3], np.nan + 0j)
    with open(path, 'w') as f:
        f.write('face,ix,iy,x,y,z,re_u,im_u,re_total,im_total\n')
        for fi, name in enumerate(grid.faces):
            for ix in range(grid.n):
                for iy in range(grid.n):
                    x, y, z = grid.points[fi, ix, iy]
                    u, t = values[fi, ix, iy], total[fi, ix, iy]
                    f.write(f"{name},{ix},{iy},{x:.17g},{y:.17g},{z:.17g},"
                            f"{u.real:.17g},{u.imag:.17g},{t.real:.17g},{t.imag:.17g}\n")
    logger.info(f"📄 Field written to {path}")
    return path


def write_study_csv(rows, path):
    """k,j,h,error,iterations,seconds"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write('k,j,h,error,iterations,seconds\n')
        for row in rows:
            f.write(f"{row['k']:.17g},{row['j']},{row['h']:.17g},{row['error']:.17g},"
                    f"{row['iterations']},{row['seconds']:.6f}\n")
    logger.info(f"📄 Study table written to {path}")
    return path


def write_surface_csv(solution, mesh, dofs, path):
    """kind,x,y,re,im: phi_h at node positions, psi_h at triangle centroids"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nodes = mesh.lattice_to_xy(dofs.node_coords()) if dofs.n_nodes else np.zeros((0, 2))
    _, _, verts = active_triangles(mesh, dofs)
    cents = mesh.origin_xy + verts.mean(axis=1) if len(verts) else np.zeros((0, 2))
    with open(path, 'w') as f:
        f.write('kind,x,y,re,im\n')
        for (x, y), v in zip(nodes, solution.phi):
            f.write(f"phi,{x:.17g},{y:.17g},{v.real:.17g},{v.imag:.17g}\n")
        for (x, y), v in zip(cents, solution.psi):
            f.write(f"psi,{x:.17g},{y:.17g},{v.real:.17g},{v.imag:.17g}\n")
    logger.info(f"📄 Surface data written to {path}")
    return path
