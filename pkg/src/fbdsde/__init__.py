"""Fully coupled forward-backward doubly stochastic differential equations:
discretisation, lattice and Monte Carlo solvers, a stochastic maximum
principle harness, a two-player linear-quadratic game and the SPDE bridge."""

__version__ = "0.1.0"

from .noise import Lattice, NoiseBundle, TimeGrid, build_lattice, make_grid, sample_noise
from .model import CoefficientSet, ControlDomain, ControlPath, StateQuadruple, linear_quadratic
from .solver import SolverConfig, solve_lattice, solve_partially_coupled_mc

__all__ = [
    "CoefficientSet", "ControlDomain", "ControlPath", "Lattice", "NoiseBundle", "SolverConfig",
    "StateQuadruple", "TimeGrid", "__version__", "build_lattice", "linear_quadratic", "make_grid",
    "sample_noise", "solve_lattice", "solve_partially_coupled_mc",
]
