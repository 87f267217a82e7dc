#!/usr/bin/env python3
"""
Screen BEM Command Line
Subcommands mesh, solve, field and converge driven by one JSON run configuration

Exit codes: 0 success, 1 solver non-convergence, 2 invalid configuration or input
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from assembly import ImpedanceParams, IncidentWave, assemble_dense, assemble_generating_blocks, assemble_rhs
from config import as_complex, load_config, setup_logging
from errors import ConfigError, ScreenBEMError
from fastmv import build_symbols
from geometry import make_prefractal, write_polygon_csv
from mesh import build_dof_map, build_lattice, mesh_summary, save_mesh, write_wireframe_csv
from postprocess import build_grid, convergence_study, evaluate_on_grid, write_field_csv, write_surface_csv
from quadrature import QuadratureConfig
from solver import GmresConfig, load_solution, save_solution, solve, solve_dense, write_iteration_log

logger = logging.getLogger(__name__)

SOLUTION_FILE = 'solution.npz'


def quadrature_config(cfg):
    return QuadratureConfig(**cfg.quadrature.model_dump())


def gmres_config(cfg):
    return GmresConfig(**cfg.gmres.model_dump())


def impedance(cfg):
    return ImpedanceParams(cfg.lambda_plus_complex, cfg.lambda_minus_complex)


def _prepare(cfg):
    polygon = make_prefractal(cfg.family, cfg.level, cfg.beta)
    mesh = build_lattice(polygon, cfg.refinement)
    dofs = build_dof_map(mesh)
    return polygon, mesh, dofs


def cmd_mesh(cfg):
    """Polygon, wireframe and mask files plus a printed summary"""
    out = cfg.output_path
    polygon = make_prefractal(cfg.family, cfg.level, cfg.beta)
    write_polygon_csv(polygon, out / 'polygon.csv')
    mesh = build_lattice(polygon, cfg.refinement)
    dofs = build_dof_map(mesh)
    write_wireframe_csv(mesh, out / 'wireframe.csv')
    save_mesh(mesh, out / 'mesh.npz')
    summary = mesh_summary(mesh, dofs, polygon)
    print(json.dumps(summary, indent=2))
    logger.info(f"✅ Mesh: {polygon.n_edges} edges, {dofs.n_dofs} DOFs")
    return summary


def cmd_solve(cfg, iteration_log=None, zero_rhs=False):
    """Assemble and solve; writes solution.npz, surface.csv and the iteration log"""
    if not cfg.k > 0:
        raise ConfigError(f"solve needs a positive wavenumber, got k={cfg.k}")
    out = cfg.output_path
    _, mesh, dofs = _prepare(cfg)
    lam = impedance(cfg)
    qcfg = quadrature_config(cfg)
    inc = IncidentWave(cfg.k, cfg.direction)
    rhs = assemble_rhs(mesh, dofs, inc, lam, qcfg.regular_order)
    if zero_rhs:
        rhs = np.zeros_like(rhs)

    if cfg.mode == 'dense':
        if iteration_log is not None:
            logger.warning(f"⚠️ Dense LU has no iteration history; {iteration_log} is not written")
        A = assemble_dense(mesh, dofs, cfg.k, lam, qcfg, threads=cfg.threads)
        solution = solve_dense(A, dofs, rhs)
    else:
        blocks = assemble_generating_blocks(mesh, dofs, cfg.k, lam, qcfg, threads=cfg.threads)
        op = build_symbols(blocks, dofs, workers=cfg.threads)
        solution = solve(op, dofs, rhs, gmres_config(cfg))
        write_iteration_log(solution.history, iteration_log or out / 'iterations.csv')

    meta = {**cfg.model_dump(mode='json'), 'impedance': lam.describe()}
    save_solution(solution, out / SOLUTION_FILE, json.dumps(meta))
    write_surface_csv(solution, mesh, dofs, out / 'surface.csv')
    return solution


def cmd_field(cfg, solution_path=None):
    """Field on the cube faces from a stored (or freshly computed) solution"""
    out = cfg.output_path
    _, mesh, dofs = _prepare(cfg)
    path = Path(solution_path) if solution_path else out / SOLUTION_FILE
    if path.exists():
        solution, _ = load_solution(path)
        logger.info(f"📄 Loaded solution from {path}")
    else:
        logger.info(f"⚠️ No solution at {path}; solving first")
        solution = cmd_solve(cfg)
    grid = build_grid(mesh, dofs, cfg.grid.side, cfg.grid.n, cfg.grid.faces, cfg.grid.standoff)
    inc = IncidentWave(cfg.k, cfg.direction)
    grid = evaluate_on_grid(solution, mesh, dofs, cfg.k, grid, inc, threads=cfg.threads)
    write_field_csv(grid, out / 'field.csv')
    return grid


def cmd_converge(cfg):
    """Convergence study over the configured levels and wavenumbers"""
    study = cfg.study
    lp = as_complex(study.lambda_plus_factor)
    lm = as_complex(study.lambda_minus_factor)
    return convergence_study(
        cfg.family, study.j_max, study.j_ref, study.k_list,
        lambda k: ImpedanceParams(lp * k, lm * k),
        cfg.direction, cfg.grid, quadrature_config(cfg), gmres_config(cfg),
        beta=cfg.beta, refinement=cfg.refinement, j_min=study.j_min,
        threads=cfg.threads, mode=cfg.mode, csv_path=cfg.output_path / 'study.csv')


def build_parser():
    parser = argparse.ArgumentParser(prog='screen-bem',
                                     description='Galerkin BEM for impedance fractal screens')
    parser.add_argument('--log-level', default=None, help='logging level (default from SCREEN_BEM_LOG_LEVEL)')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p):
        p.add_argument('--config', type=Path, default=None, help='JSON run configuration')
        p.add_argument('--threads', type=int, default=None, help='worker threads for assembly and field')
        p.add_argument('--mode', choices=('fast', 'dense'), default=None, help='FFT operator or dense oracle')
        p.add_argument('--output-dir', default=None, help='directory for result files')
        p.add_argument('--print-config', action='store_true', help='print the resolved configuration and exit')
        return p

    common(sub.add_parser('mesh', help='generate the prefractal and its lattice mesh'))
    p_solve = common(sub.add_parser('solve', help='assemble and solve the BEM system'))
    p_solve.add_argument('--iteration-log', type=Path, default=None, help='CSV of GMRES residuals')
    p_solve.add_argument('--zero-rhs', action='store_true', help='solve with a zero right-hand side')
    p_field = common(sub.add_parser('field', help='evaluate the field on cube faces'))
    p_field.add_argument('--solution', type=Path, default=None, help='stored solution.npz')
    common(sub.add_parser('converge', help='run the convergence study'))
    return parser


def resolve_config(args):
    overrides = {}
    if args.threads is not None:
        overrides['threads'] = args.threads
    if args.mode is not None:
        overrides['mode'] = args.mode
    if args.output_dir is not None:
        overrides['output_dir'] = args.output_dir
    return load_config(args.config, **overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(cfg.model_dump_json(indent=2))
            return 0

        logger.info(f"🚀 {args.command}: {cfg.family} j={cfg.level} m={cfg.refinement} k={cfg.k} ({cfg.mode})")
        if args.command == 'mesh':
            cmd_mesh(cfg)
        elif args.command == 'solve':
            solution = cmd_solve(cfg, args.iteration_log, args.zero_rhs)
            if not solution.converged:
                logger.error(f"❌ Solver did not converge (residual {solution.residual:.3e})")
                return 1
        elif args.command == 'field':
            cmd_field(cfg, args.solution)
        elif args.command == 'converge':
            cmd_converge(cfg)
        logger.info(f"🎉 {args.command} complete")
        return 0
    except ScreenBEMError as e:
        logger.error(f"❌ {str(e)}")
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
