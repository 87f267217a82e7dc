#!/usr/bin/env python3
"""
Restarted GMRES Solver
Matrix-free GMRES with modified Gram-Schmidt, selective reorthogonalisation and
complex Givens rotations, plus a dense LU oracle and the prefractal pipeline
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from assembly import IncidentWave, assemble_dense, assemble_generating_blocks, assemble_rhs
from errors import DimensionError, SolverError
from fastmv import build_symbols
from geometry import make_prefractal
from mesh import build_dof_map, build_lattice

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GmresConfig:
    rel_tol: float = 1e-8
    restart: int = 200
    max_iterations: int = 2000
    # reorthogonalise when the Arnoldi vector keeps less than this share of its norm
    reorth_threshold: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise SolverError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.restart < 1 or self.max_iterations < 1:
            raise SolverError(f"restart and max_iterations must be >= 1, got {self.restart}/{self.max_iterations}")


@dataclass
class Solution:
    """BEM coefficients: phi on active nodes (P1), psi on active triangles (P0)"""

    phi: np.ndarray
    psi: np.ndarray
    iterations: int
    residual: float
    seconds: float
    converged: bool = True
    history: list = field(default_factory=list)

    @property
    def x(self):
        return np.concatenate([self.phi, self.psi])

    @classmethod
    def from_vector(cls, x, n_nodes, **kwargs):
        return cls(x[:n_nodes].copy(), x[n_nodes:].copy(), **kwargs)


def _as_matvec(op):
    if isinstance(op, np.ndarray):
        return lambda v: op @ v
    if hasattr(op, 'new_scratch'):
        scratch = op.new_scratch()
        return lambda v: op.matvec(v, scratch)
    if hasattr(op, 'matvec'):
        return op.matvec
    if callable(op):
        return op
    raise SolverError(f"Cannot apply operator of type {type(op).__name__}")


def _givens(a, b):
    """c real, s complex with [[c, s], [-conj(s), c]] [a, b]^T = [r, 0]^T"""
    if b == 0:
        return 1.0, 0.0
    if a == 0:
        return 0.0, 1.0
    nu = np.hypot(abs(a), abs(b))
    return abs(a) / nu, (a / abs(a)) * np.conj(b) / nu


def gmres(matvec, b, cfg=GmresConfig(), x0=None):
    """
    Restarted GMRES. Returns (x, iterations, relative residual, converged, history);
    history holds (iteration, relative residual) estimates. The returned x is the best
    iterate by true residual.
    """
    b = np.asarray(b, dtype=complex)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=complex), 0, 0.0, True, []

    x = np.zeros(n, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex).copy()
    m = min(cfg.restart, n)
    total = 0
    history = []
    best_x, best_res = x.copy(), np.inf

    while True:
        r = b - matvec(x)
        if not np.all(np.isfinite(r)):
            raise SolverError(f"Non-finite residual after {total} iterations")
        beta = np.linalg.norm(r)
        rel = beta / bnorm
        if rel < best_res:
            best_x, best_res = x.copy(), rel
        if rel <= cfg.rel_tol or total >= cfg.max_iterations:
            break

        V = np.zeros((n, m + 1), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[:, 0] = r / beta

        steps = 0
        for j in range(m):
            w = matvec(V[:, j])
            total += 1
            if not np.all(np.isfinite(w)):
                raise SolverError(f"Non-finite operator output at iteration {total}")
            before = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = np.vdot(V[:, i], w)
                w -= H[i, j] * V[:, i]
            after = np.linalg.norm(w)
            if after < cfg.reorth_threshold * before:
                for i in range(j + 1):
                    corr = np.vdot(V[:, i], w)
                    H[i, j] += corr
                    w -= corr * V[:, i]
                after = np.linalg.norm(w)
            H[j + 1, j] = after
            breakdown = after <= 1e-14 * before
            if not breakdown:
                V[:, j + 1] = w / after

            for i in range(j):
                hi = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = hi
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]

            steps = j + 1
            est = abs(g[j + 1]) / bnorm
            history.append((total, float(est)))
            logger.debug(f"GMRES iteration {total}: residual {est:.3e}")
            if not np.isfinite(est):
                raise SolverError(f"GMRES breakdown: non-finite residual at iteration {total}")
            if est <= cfg.rel_tol or breakdown or total >= cfg.max_iterations:
                break

        y = scipy.linalg.solve_triangular(H[:steps, :steps], g[:steps])
        x = x + V[:, :steps] @ y
        logger.info(f"🔁 GMRES cycle done: {total} iterations, estimate {history[-1][1]:.3e}")

    converged = best_res <= cfg.rel_tol
    return best_x, total, float(best_res), converged, history


def solve(op, dofs, rhs, cfg=GmresConfig()):
    """GMRES on the screen system; non-convergence is reported, not raised"""
    rhs = np.asarray(rhs)
    if rhs.shape != (dofs.n_dofs,):
        raise DimensionError(f"Right-hand side has length {rhs.size}, expected {dofs.n_dofs}")
    start = time.perf_counter()
    x, its, res, converged, history = gmres(_as_matvec(op), rhs, cfg)
    seconds = time.perf_counter() - start
    if converged:
        logger.info(f"✅ GMRES converged in {its} iterations (residual {res:.3e}, {seconds:.2f}s)")
    else:
        logger.warning(f"⚠️ GMRES did not converge: {its} iterations, best residual {res:.3e}")
    return Solution.from_vector(x, dofs.n_nodes, iterations=its, residual=res, seconds=seconds,
                                converged=converged, history=history)


def solve_dense(A, dofs, rhs):
    """Direct LU solve, the oracle for the iterative path"""
    start = time.perf_counter()
    if dofs.n_dofs == 0:
        x = np.zeros(0, dtype=complex)
    else:
        lu, piv = scipy.linalg.lu_factor(A)
        x = scipy.linalg.lu_solve((lu, piv), rhs)
    rhs_norm = np.linalg.norm(rhs)
    res = float(np.linalg.norm(A @ x - rhs) / rhs_norm) if rhs_norm > 0 else 0.0
    seconds = time.perf_counter() - start
    logger.info(f"✅ Dense LU solve: residual {res:.3e} ({seconds:.2f}s)")
    return Solution.from_vector(x, dofs.n_nodes, iterations=0, residual=res, seconds=seconds)


def write_iteration_log(history, path):
    """GMRES residual history as an iteration,residual CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write('iteration,residual\n')
        for it, res in history:
            f.write(f"{it},{res:.17g}\n")
    return path


def save_solution(solution, path, meta=None):
    """Write coefficients, solver statistics and run metadata as .npz"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, phi=solution.phi, psi=solution.psi, iterations=solution.iterations,
             residual=solution.residual, seconds=solution.seconds, converged=solution.converged,
             meta=np.array('' if meta is None else meta))
    logger.info(f"📄 Solution written to {path}")
    return path


def load_solution(path):
    with np.load(path) as data:
        sol = Solution(data['phi'], data['psi'], int(data['iterations']), float(data['residual']),
                       float(data['seconds']), bool(data['converged']))
        return sol, str(data['meta'])


@dataclass
class PipelineResult:
    polygon: object
    mesh: object
    dofs: object
    solution: Solution


def solve_prefractal(family, level, k, direction, impedance, quadrature, gmres_cfg,
                     beta=None, refinement=1, mode='fast', threads=1):
    """Geometry, mesh, assembly and solve for one prefractal level"""
    polygon = make_prefractal(family, level, beta) if beta is not None else make_prefractal(family, level)
    mesh = build_lattice(polygon, refinement)
    dofs = build_dof_map(mesh)
    inc = IncidentWave(k, tuple(direction))
    rhs = assemble_rhs(mesh, dofs, inc, impedance, quadrature.regular_order)
    if mode == 'dense':
        A = assemble_dense(mesh, dofs, k, impedance, quadrature, threads=threads)
        solution = solve_dense(A, dofs, rhs)
    else:
        blocks = assemble_generating_blocks(mesh, dofs, k, impedance, quadrature, threads=threads)
        op = build_symbols(blocks, dofs, workers=threads)
        solution = solve(op, dofs, rhs, gmres_cfg)
    return PipelineResult(polygon, mesh, dofs, solution)
