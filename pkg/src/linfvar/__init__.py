"""Solver and verifier for one-dimensional vectorial L-infinity variational problems.

The pipeline minimises the integral energies ``int L^m`` with continuation in
``m``, takes the last stage as the limiting map, and checks it numerically:
absolute minimality on subintervals, the L-infinity ODE system in the sense of
diffuse (Young-measure) second derivatives, convergence of the stage
derivatives, and the singular set where ``Du = V(x, u)``.
"""

from linfvar.grid import AffineData, Grid, GridFunction, Interval, build_grid
from linfvar.lagrangian import (
    LagrangianModel,
    ObservationModel,
    builtin_data_assimilation,
    builtin_drift,
    builtin_power,
    builtin_yu,
    check_hypotheses,
    eval_L,
)
from linfvar.solver import SolveConfig, continuation_solve, minimize_em

__all__ = [
    "AffineData",
    "Grid",
    "GridFunction",
    "Interval",
    "LagrangianModel",
    "ObservationModel",
    "SolveConfig",
    "build_grid",
    "builtin_data_assimilation",
    "builtin_drift",
    "builtin_power",
    "builtin_yu",
    "check_hypotheses",
    "continuation_solve",
    "eval_L",
    "minimize_em",
]
