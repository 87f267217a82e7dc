"""Shared meshes and operators; the Koch level-2 dense matrix is built once per session"""

import numpy as np
import pytest

from assembly import ImpedanceParams, assemble_dense, assemble_generating_blocks
from fastmv import build_symbols
from geometry import koch_prefractal, square_prefractal, KOCH_LATTICE_BETA
from mesh import build_dof_map, build_lattice
from quadrature import QuadratureConfig


def absorbing_impedance(k):
    return ImpedanceParams(1.5 * k * (1 + 1j), k * (1 + 1j))


def screen(polygon, m=1):
    mesh = build_lattice(polygon, m)
    return mesh, build_dof_map(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope='session')
def quad():
    return QuadratureConfig()


@pytest.fixture(scope='session')
def koch1():
    return screen(koch_prefractal(KOCH_LATTICE_BETA, 1))


@pytest.fixture(scope='session')
def koch2():
    return screen(koch_prefractal(KOCH_LATTICE_BETA, 2))


@pytest.fixture(scope='session')
def square1():
    return screen(square_prefractal(1))


@pytest.fixture(scope='session')
def koch2_system(koch2, quad):
    """Dense matrix and FFT operator on Koch level 2 at k = 5"""
    mesh, dofs = koch2
    lam = absorbing_impedance(5.0)
    dense = assemble_dense(mesh, dofs, 5.0, lam, quad)
    blocks = assemble_generating_blocks(mesh, dofs, 5.0, lam, quad, cache_dir='')
    return dense, blocks, build_symbols(blocks, dofs)
