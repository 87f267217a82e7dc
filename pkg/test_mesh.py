import math
from fractions import Fraction

import numpy as np
import pytest

from errors import MeshError
from geometry import KOCH_LATTICE_BETA, PrefractalPolygon, koch_prefractal, square_prefractal
from mesh import (DOWN, UP, LatticeMesh, build_dof_map, build_lattice, full_parallelogram, load_mesh,
                  mesh_summary, save_mesh, write_wireframe_csv)


def active_set(mesh, kind):
    origin = np.array(mesh.origin)
    return {tuple(c) for c in mesh.active_cells(kind) + origin}


def test_koch_level_one_lattice_conforms():
    poly = koch_prefractal(KOCH_LATTICE_BETA, 1)
    mesh = build_lattice(poly)
    assert mesh.theta == pytest.approx(math.pi / 3)
    local = poly.vertices - np.array(mesh.origin)
    assert local.min() >= 1
    assert local[:, 0].max() <= mesh.nx - 1 and local[:, 1].max() <= mesh.ny - 1
    assert np.allclose(mesh.lattice_to_xy(local), poly.physical_vertices(), atol=1e-14)


def test_square_level_two_counts():
    mesh = build_lattice(square_prefractal(2))
    assert mesh.theta == pytest.approx(math.pi / 2)
    assert int(mesh.up_mask.sum()) == 256
    assert int(mesh.down_mask.sum()) == 256
    assert mesh.h == pytest.approx(math.sqrt(2.0) / 16)


def test_unit_triangle_at_pitch_one_third():
    mesh = build_lattice(koch_prefractal(KOCH_LATTICE_BETA, 0), 3)
    dofs = build_dof_map(mesh)
    assert (dofs.n_up, dofs.n_down, dofs.n_nodes) == (6, 3, 1)
    assert mesh.h == pytest.approx(1.0 / 3.0)
    assert mesh.pitch == Fraction(1, 3)


def test_full_parallelogram_numbering():
    dofs = build_dof_map(full_parallelogram(7, 5))
    assert (dofs.n_nodes, dofs.n_up, dofs.n_down, dofs.n_par) == (24, 35, 35, 94)
    assert np.array_equal(dofs.par_index, np.arange(94))
    # node (i, j) -> (i - 1)(ny - 1) + (j - 1); up (a, b) -> 24 + a ny + b; down after all ups
    assert np.array_equal(dofs.node_coords()[:2], [[1, 1], [1, 2]])
    assert dofs.par_block_slices() == (slice(0, 24), slice(24, 59), slice(59, 94))


def test_empty_mask_gives_no_dofs():
    empty = np.zeros((3, 3), dtype=bool)
    mesh = LatticeMesh('koch', math.pi / 3, Fraction(1), 3, 3, (0, 0), empty, empty.copy())
    dofs = build_dof_map(mesh)
    assert dofs.n_dofs == 0
    assert dofs.B.shape == (dofs.n_par, 0)


@pytest.mark.parametrize('poly', [koch_prefractal(KOCH_LATTICE_BETA, j) for j in range(4)]
                         + [square_prefractal(j) for j in range(3)])
def test_active_area_matches_polygon(poly):
    mesh = build_lattice(poly)
    assert mesh.n_active * mesh.cell_area == pytest.approx(poly.area(), rel=1e-12)


def test_square_active_count_is_exact():
    for j in range(3):
        mesh = build_lattice(square_prefractal(j))
        assert mesh.n_active == 2 * 16 ** j


def test_restriction_is_an_injection(koch2):
    _, dofs = koch2
    B = dofs.B.tocsc()
    assert np.all(np.diff(B.indptr) == 1)
    assert np.all(B.data == 1)
    assert np.array_equal((dofs.B.T @ dofs.B).toarray(), np.eye(dofs.n_dofs))


def test_scatter_gather_round_trip(koch2, rng):
    _, dofs = koch2
    v = rng.standard_normal(dofs.n_dofs)
    w = dofs.scatter(v)
    assert w.shape == (dofs.n_par,)
    assert np.array_equal(dofs.gather(w), v)
    assert np.all(w[dofs.screen_index < 0] == 0)


def test_active_nodes_have_full_star(koch2):
    mesh, dofs = koch2
    for i, j in dofs.node_coords():
        for (da, db) in [(0, 0), (-1, 0), (0, -1)]:
            assert mesh.up_mask[i + da, j + db]
        for (da, db) in [(-1, 0), (-1, -1), (0, -1)]:
            assert mesh.down_mask[i + da, j + db]


@pytest.mark.parametrize('j', range(1, 4))
def test_koch_masks_are_nested(j):
    coarse = build_lattice(koch_prefractal(KOCH_LATTICE_BETA, j - 1), 3)
    fine = build_lattice(koch_prefractal(KOCH_LATTICE_BETA, j))
    assert coarse.pitch == fine.pitch
    for kind in (UP, DOWN):
        assert active_set(coarse, kind) <= active_set(fine, kind)


def test_margin_cells_are_inactive(koch2):
    mesh, _ = koch2
    for mask in (mesh.up_mask, mesh.down_mask):
        assert not mask[0].any() and not mask[-1].any()
        assert not mask[:, 0].any() and not mask[:, -1].any()


def test_refinement_scales_pitch():
    mesh = build_lattice(square_prefractal(1), 2)
    assert mesh.pitch == Fraction(1, 8)
    assert mesh.n_active == 2 * 64


def test_rejects_non_lattice_and_bad_refinement():
    with pytest.raises(MeshError):
        build_lattice(koch_prefractal(math.pi / 12, 1))
    with pytest.raises(MeshError):
        build_lattice(square_prefractal(1), 0)
    with pytest.raises(MeshError):
        build_lattice(square_prefractal(1), 1.5)


def test_rejects_pitch_mismatch():
    good = square_prefractal(1)
    bad = PrefractalPolygon('square', 1, good.vertices, Fraction(1, 2))
    with pytest.raises(MeshError):
        build_lattice(bad)


def test_summary_wireframe_and_npz(tmp_path, koch1):
    mesh, dofs = koch1
    summary = mesh_summary(mesh, dofs)
    assert summary['n_up'] + summary['n_down'] == 12
    assert summary['n_nodes'] == 1
    path = write_wireframe_csv(mesh, tmp_path / 'wireframe.csv')
    lines = path.read_text().splitlines()
    assert lines[0] == 'kind,a,b,x0,y0,x1,y1,x2,y2'
    assert len(lines) == 13
    loaded = load_mesh(save_mesh(mesh, tmp_path / 'mesh.npz'))
    assert (loaded.nx, loaded.ny, loaded.origin, loaded.pitch) == (mesh.nx, mesh.ny, mesh.origin, mesh.pitch)
    assert np.array_equal(loaded.up_mask, mesh.up_mask)
    assert np.array_equal(loaded.down_mask, mesh.down_mask)
