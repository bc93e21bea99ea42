"""
seldyn: selection dynamics of continuum residual networks.

Forward integro-differential solver, adjoint gradients, proximal-point and
maximum-principle training, and stability diagnostics on a quadrature grid.
"""
from .activation import Activation, ActivationKind, parse_activation
from .dynamics import ControlParams, RankOneSpec, Trajectory, forward_solve
from .errors import (
    ConfigError,
    DivergenceError,
    InvalidArgumentError,
    NonConvergenceError,
    PreconditionError,
    SeldynError,
)
from .grid import Grid, TimeGrid, make_grid, make_time_grid

__all__ = [
    "Activation",
    "ActivationKind",
    "ConfigError",
    "ControlParams",
    "DivergenceError",
    "Grid",
    "InvalidArgumentError",
    "NonConvergenceError",
    "PreconditionError",
    "RankOneSpec",
    "SeldynError",
    "TimeGrid",
    "Trajectory",
    "forward_solve",
    "make_grid",
    "make_time_grid",
    "parse_activation",
]
