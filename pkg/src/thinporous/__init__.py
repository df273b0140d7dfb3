"""Permeability cell problems and Darcy solves for thin porous media."""

__version__ = "0.1.0"

from .regimes import (ExponentReport, Regime, RegimeError, RegimeParams, ValidityError,
                      classify, exponent_report)
from .grid import CellGeometry, GeometryError, ObstacleShape, build_geometry
from .linsolve import SolverConfig, SolverError, cg_solve, dense_solve, minres_solve
from .cellproblems import (IncompatibleProblemError, PermeabilityTensor, permeability,
                           reduced3d_crosscheck, solve_heleshaw_cell, solve_stokes2d_cell,
                           solve_stokes3d_cell)
from .darcy import MacroDomain, solve_darcy, scale_back
