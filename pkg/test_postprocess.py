import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import absorbing_impedance
from config import GridSettings
from errors import GridError
from mesh import UP, build_dof_map, full_parallelogram
from postprocess import (build_grid, convergence_study, evaluate_field, evaluate_on_grid, relative_linf_error,
                         screen_centroid, write_field_csv, write_study_csv, write_surface_csv)
from quadrature import QuadratureConfig
from solver import GmresConfig, Solution, solve_prefractal

DIRECTION = (1.0, 1.0, -1.0)


def random_solution(dofs, rng):
    phi = rng.standard_normal(dofs.n_nodes) + 1j * rng.standard_normal(dofs.n_nodes)
    psi = rng.standard_normal(dofs.n_triangles) + 1j * rng.standard_normal(dofs.n_triangles)
    return Solution(phi, psi, 0, 0.0, 0.0)


def scaled_grid(grid, alpha):
    return grid.with_values(alpha * grid.values)


def test_zero_densities_give_zero_field(koch1):
    mesh, dofs = koch1
    zero = Solution(np.zeros(dofs.n_nodes, complex), np.zeros(dofs.n_triangles, complex), 0, 0.0, 0.0)
    points = np.array([[0.5, 0.3, 0.4], [2.0, -1.0, -0.7]])
    assert np.array_equal(evaluate_field(zero, mesh, dofs, 5.0, points), np.zeros(2))


def test_field_satisfies_helmholtz(koch1, rng):
    mesh, dofs = koch1
    k, step = 5.0, 1e-3
    sol = random_solution(dofs, rng)
    center = screen_centroid(mesh, dofs)
    shifts = step * np.vstack([np.eye(3), -np.eye(3)])
    for _ in range(20):
        xy = center + rng.uniform(-0.6, 0.6, 2)
        z = rng.choice([-1.0, 1.0]) * rng.uniform(0.7, 1.2)
        x = np.array([xy[0], xy[1], z])
        u0 = evaluate_field(sol, mesh, dofs, k, x[None])[0]
        around = evaluate_field(sol, mesh, dofs, k, x + shifts)
        residual = (around.sum() - 6.0 * u0) / step ** 2 + k * k * u0
        assert abs(residual) <= 1e-3 * np.max(np.abs(np.append(around, u0)))


def test_jump_across_screen_recovers_dirichlet_density():
    mesh = full_parallelogram(30, 30, pitch=Fraction(1, 10))
    dofs = build_dof_map(mesh)
    sol = Solution(np.ones(dofs.n_nodes, complex), np.zeros(dofs.n_triangles, complex), 0, 0.0, 0.0)
    centroid = mesh.triangle_vertices(UP, [[15, 15]])[0].mean(axis=0)
    gaps = []
    for z in (0.2, 0.1, 0.05):
        points = np.array([[centroid[0], centroid[1], z], [centroid[0], centroid[1], -z]])
        above, below = evaluate_field(sol, mesh, dofs, 0.5, points, order=16)
        gaps.append(abs(above - below - 1.0))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.1


def test_far_field_decays_like_one_over_r():
    res = solve_prefractal('koch', 1, 2.0, DIRECTION, absorbing_impedance(2.0), QuadratureConfig(),
                           GmresConfig(), mode='dense')
    mesh, dofs = res.mesh, res.dofs
    poly = res.polygon.physical_vertices()
    diameter = max(np.linalg.norm(a - b) for a in poly for b in poly)
    center = np.append(screen_centroid(mesh, dofs), 0.0)
    ray = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
    radii = np.linspace(10.0, 40.0, 7) * diameter
    u = evaluate_field(res.solution, mesh, dofs, 2.0, center + radii[:, None] * ray)
    scaled = np.abs(u) * radii
    assert (scaled.max() - scaled.min()) / scaled.max() <= 0.05


def test_grid_excludes_points_on_the_screen_plane(koch1):
    mesh, dofs = koch1
    grid = build_grid(mesh, dofs, 0.8, 3)
    assert grid.points.shape == (6, 3, 3, 3)
    assert int(grid.excluded.sum()) == 12
    assert grid.excluded[0, :, 1].all()
    assert not grid.excluded[4:].any()
    wide = build_grid(mesh, dofs, 1.4, 3)
    assert not wide.excluded.any()


def test_grid_validation(koch1):
    mesh, dofs = koch1
    with pytest.raises(GridError):
        build_grid(mesh, dofs, 0.0, 3)
    with pytest.raises(GridError):
        build_grid(mesh, dofs, 1.0, 1)
    with pytest.raises(GridError):
        build_grid(mesh, dofs, 1.0, 3, faces=('+w',))


@pytest.fixture(scope='module')
def koch1_grid(koch1):
    mesh, dofs = koch1
    sol = random_solution(dofs, np.random.default_rng(7))
    grid = build_grid(mesh, dofs, 1.4, 4)
    return evaluate_on_grid(sol, mesh, dofs, 5.0, grid)


def test_relative_error_properties(koch1_grid):
    grid = koch1_grid
    assert relative_linf_error(grid, grid) == 0.0
    other = grid.with_values(grid.values * (1.0 + 0.01 * np.cos(np.arange(grid.values.size)).reshape(grid.values.shape)))
    base = relative_linf_error(other, grid)
    assert base > 0.0
    alpha = -3.0 + 4.0j
    assert relative_linf_error(scaled_grid(other, alpha), scaled_grid(grid, alpha)) == pytest.approx(base, rel=1e-12)
    # three-face error normalises by the reference on those faces only
    sel = [grid.faces.index(f) for f in ('+x', '+y', '-z')]
    expected = np.max(np.abs(other.values[sel] - grid.values[sel])) / np.max(np.abs(grid.values[sel]))
    assert relative_linf_error(other, grid, faces=('+x', '+y', '-z')) == pytest.approx(expected, rel=1e-14)


def test_relative_error_rejects_bad_inputs(koch1_grid, koch1):
    mesh, dofs = koch1
    grid = koch1_grid
    with pytest.raises(GridError):
        relative_linf_error(grid, grid.with_values(np.zeros(grid.values.shape)))
    smaller = build_grid(mesh, dofs, 1.4, 3)
    with pytest.raises(GridError):
        relative_linf_error(evaluate_on_grid(random_solution(dofs, np.random.default_rng(1)), mesh, dofs, 5.0,
                                             smaller), grid)
    with pytest.raises(GridError):
        relative_linf_error(build_grid(mesh, dofs, 1.4, 4), grid)


def test_solution_size_mismatch(koch1):
    mesh, dofs = koch1
    bad = Solution(np.zeros(dofs.n_nodes + 1, complex), np.zeros(dofs.n_triangles, complex), 0, 0.0, 0.0)
    with pytest.raises(GridError):
        evaluate_field(bad, mesh, dofs, 5.0, np.array([[0.0, 0.0, 1.0]]))


def test_single_level_study(tmp_path):
    grid = GridSettings(side=2.0, n=4)
    rows = convergence_study('square', 0, 1, [5.0], lambda k: absorbing_impedance(k), DIRECTION, grid,
                             QuadratureConfig(), GmresConfig(), j_min=0, csv_path=tmp_path / 'study.csv')
    assert len(rows) == 1
    row = rows[0]
    assert (row['k'], row['j']) == (5.0, 0)
    assert math.isfinite(row['error']) and row['error'] > 0
    assert row['h'] == pytest.approx(math.sqrt(2.0))
    lines = (tmp_path / 'study.csv').read_text().splitlines()
    assert lines[0] == 'k,j,h,error,iterations,seconds'
    assert len(lines) == 2


def test_study_records_non_convergence():
    grid = GridSettings(side=2.0, n=3)
    rows = convergence_study('square', 0, 1, [5.0], absorbing_impedance(5.0), DIRECTION, grid,
                             QuadratureConfig(), GmresConfig(rel_tol=1e-15, max_iterations=1), j_min=0)
    assert len(rows) == 1
    assert not rows[0]['converged']
    assert rows[0]['iterations'] == 1


def test_study_rejects_reference_below_levels():
    with pytest.raises(GridError):
        convergence_study('koch', 2, 2, [5.0], absorbing_impedance(5.0), DIRECTION, GridSettings(),
                          QuadratureConfig(), GmresConfig())


def test_csv_writers(tmp_path, koch1, koch1_grid):
    mesh, dofs = koch1
    path = write_field_csv(koch1_grid, tmp_path / 'field.csv')
    lines = path.read_text().splitlines()
    assert lines[0] == 'face,ix,iy,x,y,z,re_u,im_u,re_total,im_total'
    assert len(lines) == 1 + 6 * 16
    sol = random_solution(dofs, np.random.default_rng(3))
    lines = write_surface_csv(sol, mesh, dofs, tmp_path / 'surface.csv').read_text().splitlines()
    assert lines[0] == 'kind,x,y,re,im'
    assert sum(line.startswith('phi,') for line in lines) == dofs.n_nodes
    assert sum(line.startswith('psi,') for line in lines) == dofs.n_triangles
    rows = [{'k': 5.0, 'j': 1, 'h': 1 / 3, 'error': 0.1, 'iterations': 12, 'seconds': 0.5}]
    assert write_study_csv(rows, tmp_path / 's.csv').read_text().splitlines()[1].startswith('5,1,')


@pytest.mark.slow
def test_koch_study_errors_decrease():
    rows = convergence_study('koch', 3, 4, [5.0], absorbing_impedance(5.0), DIRECTION, GridSettings(side=1.4, n=20),
                             QuadratureConfig(), GmresConfig(), j_min=1)
    errors = [row['error'] for row in rows]
    assert [row['h'] for row in rows] == pytest.approx([3.0 ** -j for j in (1, 2, 3)])
    assert errors[0] > errors[1] > errors[2]


@pytest.mark.slow
def test_square_study_errors_decrease():
    rows = convergence_study('square', 2, 3, [5.0], absorbing_impedance(5.0), DIRECTION, GridSettings(side=2.0, n=20),
                             QuadratureConfig(), GmresConfig(), j_min=1)
    assert [row['h'] for row in rows] == pytest.approx([4.0 ** (-j + 0.25) for j in (1, 2)])
    assert rows[0]['error'] > rows[1]['error']
