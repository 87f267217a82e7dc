#!/usr/bin/env python3
"""
Exception hierarchy for the screen BEM solver
Every library failure raises one of these; the CLI maps them to exit codes
"""


class ScreenBEMError(Exception):
    """Base class for all solver errors"""

    exit_code = 2


class GeometryError(ScreenBEMError):
    """Invalid prefractal parameters or polygon data"""


class MeshError(ScreenBEMError):
    """Polygon cannot be embedded in a uniform lattice mesh"""


class QuadratureError(ScreenBEMError):
    """Invalid quadrature request (bad orders, degenerate triangles)"""


class SingularEvaluationError(QuadratureError):
    """Kernel evaluated at coincident points"""


class AssemblyError(ScreenBEMError):
    """Operator assembly cannot proceed"""


class DimensionError(ScreenBEMError, ValueError):
    """Vector or block dimensions do not match"""


class SolverError(ScreenBEMError):
    """Krylov breakdown (NaN/Inf) or unusable system"""

    exit_code = 1


class GridError(ScreenBEMError):
    """Field grids are incompatible or degenerate"""


class ConfigError(ScreenBEMError):
    """Run configuration failed validation"""
