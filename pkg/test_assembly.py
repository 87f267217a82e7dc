import dataclasses

import numpy as np
import pytest
import scipy.linalg

from assembly import (ImpedanceParams, IncidentWave, assemble_dense, assemble_generating_blocks, assemble_rhs,
                      generating_key, singular_window)
from conftest import absorbing_impedance
from errors import AssemblyError
from mesh import DOWN, NODE, UP, full_parallelogram, build_dof_map


def dof_positions(dofs):
    """Kind and local lattice position of every screen DOF"""
    kinds = np.concatenate([np.full(dofs.n_nodes, NODE), np.full(dofs.n_up, UP), np.full(dofs.n_down, DOWN)])
    pos = np.concatenate([dofs.node_coords(), dofs.up_cells(), dofs.down_cells()])
    return kinds, pos


def test_impedance_coefficients():
    lam = ImpedanceParams(3.0 + 1j, 1.0 + 1j)
    s = 4.0 + 2j
    assert lam.c0 == pytest.approx((3 + 1j) * (1 + 1j) / s)
    assert lam.c1 == pytest.approx(1.0 / s)
    assert lam.c2 == pytest.approx(1.0)
    assert lam.cS == pytest.approx(s)
    assert lam.is_constant


def test_impedance_validation():
    with pytest.raises(AssemblyError):
        ImpedanceParams(1.0 - 0.1j, 1.0)
    with pytest.raises(AssemblyError):
        ImpedanceParams(1.0, -1.0)
    k = 20.0
    lam = absorbing_impedance(k)
    assert lam.describe() == {'lambda_plus': [30.0, 30.0], 'lambda_minus': [20.0, 20.0]}


def test_incident_wave():
    inc = IncidentWave(20.0, (1.0, 1.0, -1.0))
    assert np.linalg.norm(inc.d) == pytest.approx(1.0)
    xy = np.array([[0.3, -0.2]])
    assert inc.normal_derivative(xy) == pytest.approx(1j * 20.0 * inc.d[2] * inc.trace(xy))
    assert inc.field(np.array([0.3, -0.2, 0.0])) == pytest.approx(inc.trace(xy)[0])
    with pytest.raises(AssemblyError):
        IncidentWave(0.0, (0.0, 0.0, -1.0))
    with pytest.raises(AssemblyError):
        IncidentWave(1.0, (0.0, 0.0, 0.0))


def test_generating_array_shapes(koch1, quad):
    mesh, dofs = koch1
    blocks = assemble_generating_blocks(mesh, dofs, 5.0, absorbing_impedance(5.0), quad, cache_dir='')
    nx, ny = mesh.nx, mesh.ny
    assert blocks.generating[(NODE, NODE)].shape == (2 * nx - 3, 2 * ny - 3)
    assert blocks.generating[(UP, DOWN)].shape == (2 * nx - 1, 2 * ny - 1)
    assert blocks.generating[(NODE, UP)].shape == (2 * nx - 2, 2 * ny - 2)
    assert blocks.generating[(DOWN, NODE)].shape == (2 * nx - 2, 2 * ny - 2)


def test_p0_mass_is_diagonal(quad):
    mesh = full_parallelogram(4, 4, pitch=1)
    dofs = build_dof_map(mesh)
    one = assemble_generating_blocks(mesh, dofs, 2.0, ImpedanceParams(1.0, 1.0), quad, cache_dir='')
    two = assemble_generating_blocks(mesh, dofs, 2.0, ImpedanceParams(2.0, 2.0), quad, cache_dir='')
    for kinds in ((UP, UP), (DOWN, DOWN), (UP, DOWN)):
        # G = mass - cS S with cS = 2 and 4
        mass = 2.0 * one.generating[kinds] - two.generating[kinds]
        expected = np.zeros_like(mass)
        if kinds[0] == kinds[1]:
            expected[3, 3] = mesh.cell_area
        assert np.allclose(mass, expected, rtol=0, atol=1e-13)


def test_equal_offsets_give_equal_entries(koch2_system, koch2, rng):
    dense, _, _ = koch2_system
    _, dofs = koch2
    kinds, pos = dof_positions(dofs)
    groups = {}
    for p in range(dofs.n_dofs):
        for q in range(dofs.n_dofs):
            key = (kinds[p], kinds[q], *(pos[q] - pos[p]))
            groups.setdefault(key, []).append((p, q))
    keys = [key for key, members in groups.items() if len(members) > 1]
    scale = np.max(np.abs(dense))
    for i in rng.choice(len(keys), size=50, replace=False):
        members = groups[keys[i]]
        values = np.array([dense[p, q] for p, q in members])
        assert np.max(np.abs(values - values[0])) <= 1e-13 * scale


def test_dense_matches_projected_generating_arrays(koch2_system, koch2):
    dense, _, op = koch2_system
    _, dofs = koch2
    full = op.dense_parallelogram()
    projected = dofs.B.T @ full @ dofs.B.toarray()
    assert np.max(np.abs(projected - dense)) <= 1e-13 * np.max(np.abs(dense))


@pytest.mark.parametrize('level', ['koch1', 'koch2'])
def test_laplace_blocks_are_positive_definite(level, request, quad):
    mesh, dofs = request.getfixturevalue(level)
    # lambda- = 0 makes c0 vanish and cS = 1
    A = assemble_dense(mesh, dofs, 0.0, ImpedanceParams(1.0, 0.0), quad)
    nodes, up, down = dofs.block_slices()
    tris = slice(up.start, down.stop)
    minus_t = A[nodes, nodes]
    single = np.diag(np.full(dofs.n_triangles, mesh.cell_area)) - A[tris, tris]
    for block in (minus_t, single):
        assert np.max(np.abs(block.imag)) == 0.0
        assert np.allclose(block, block.T, rtol=0, atol=1e-8 * np.max(np.abs(block)))
        scipy.linalg.cholesky(0.5 * (block.real + block.real.T))


def test_single_and_hypersingular_blocks_are_symmetric(koch1, quad):
    mesh, dofs = koch1
    A = assemble_dense(mesh, dofs, 5.0, absorbing_impedance(5.0), quad)
    nodes, up, down = dofs.block_slices()
    tris = slice(up.start, down.stop)
    for block in (A[nodes, nodes], A[tris, tris]):
        assert np.allclose(block, block.T, rtol=0, atol=1e-8 * np.max(np.abs(block)))


def test_equal_impedances_decouple(koch2, quad):
    mesh, dofs = koch2
    A = assemble_dense(mesh, dofs, 5.0, ImpedanceParams(2.0 + 2j, 2.0 + 2j), quad)
    nodes, up, down = dofs.block_slices()
    tris = slice(up.start, down.stop)
    assert np.all(A[nodes, tris] == 0)
    assert np.all(A[tris, nodes] == 0)


def test_per_element_impedance_on_dense_path_only(koch1, quad):
    mesh, dofs = koch1
    n = dofs.n_triangles
    uniform = ImpedanceParams(np.full(n, 2.0 + 1j), np.full(n, 1.0 + 1j))
    assert not uniform.is_constant
    A = assemble_dense(mesh, dofs, 5.0, uniform, quad)
    constant = assemble_dense(mesh, dofs, 5.0, ImpedanceParams(2.0 + 1j, 1.0 + 1j), quad)
    assert np.allclose(A, constant, rtol=1e-14, atol=0)
    varying = ImpedanceParams(np.linspace(1.0, 2.0, n) + 1j, np.full(n, 1.0 + 1j))
    B = assemble_dense(mesh, dofs, 5.0, varying, quad)
    assert not np.allclose(B, constant)
    with pytest.raises(AssemblyError):
        assemble_generating_blocks(mesh, dofs, 5.0, varying, quad, cache_dir='')
    with pytest.raises(AssemblyError):
        ImpedanceParams(np.ones(n + 1), np.ones(n + 1)).per_triangle(n)


def test_dense_cap(koch1, quad):
    mesh, dofs = koch1
    with pytest.raises(AssemblyError):
        assemble_dense(mesh, dofs, 5.0, absorbing_impedance(5.0), quad, max_dofs=dofs.n_dofs - 1)


def test_rhs_for_normal_incidence():
    mesh = full_parallelogram(4, 4, pitch=1)
    dofs = build_dof_map(mesh)
    k = 3.0
    lam = ImpedanceParams(2.0 + 1j, 1.0 + 1j)
    b = assemble_rhs(mesh, dofs, IncidentWave(k, (0.0, 0.0, -1.0)), lam)
    nodes, up, down = dofs.block_slices()
    # each hat integrates to a third of its six-triangle support
    assert np.allclose(b[nodes], -1j * k * 2.0 * mesh.cell_area, rtol=1e-13)
    assert np.allclose(b[up.start:], -(3.0 + 2j) * mesh.cell_area, rtol=1e-13)


def test_rhs_second_row_scales_with_impedance_sum(koch1):
    mesh, dofs = koch1
    inc = IncidentWave(5.0, (1.0, 1.0, -1.0))
    one = assemble_rhs(mesh, dofs, inc, ImpedanceParams(1.0 + 1j, 1.0))
    two = assemble_rhs(mesh, dofs, inc, ImpedanceParams(2.0 + 2j, 2.0))
    tris = slice(dofs.n_nodes, None)
    assert np.allclose(two[tris], 2.0 * one[tris], rtol=1e-14, atol=0)
    assert np.array_equal(two[:dofs.n_nodes], one[:dofs.n_nodes])


def test_generating_cache_round_trip(tmp_path, koch1, quad):
    mesh, dofs = koch1
    lam = absorbing_impedance(5.0)
    first = assemble_generating_blocks(mesh, dofs, 5.0, lam, quad, cache_dir=tmp_path)
    assert list(tmp_path.glob('generating_*.npz'))
    second = assemble_generating_blocks(mesh, dofs, 5.0, lam, quad, cache_dir=tmp_path)
    for key, G in first.generating.items():
        assert np.array_equal(second.generating[key], G)


def test_generating_key_ignores_masks(quad):
    lam = absorbing_impedance(5.0)
    full = full_parallelogram(5, 4)
    holes = full.down_mask.copy()
    holes[2, 1] = False
    sparse_mesh = dataclasses.replace(full, down_mask=holes)
    assert generating_key(sparse_mesh, 5.0, lam, quad) == generating_key(full, 5.0, lam, quad)
    assert generating_key(full_parallelogram(5, 5), 5.0, lam, quad) != generating_key(full, 5.0, lam, quad)
    assert generating_key(full, 6.0, lam, quad) != generating_key(full, 5.0, lam, quad)


def test_singular_window_covers_separation(koch2, quad):
    mesh, _ = koch2
    assert singular_window(mesh, quad) == 4
