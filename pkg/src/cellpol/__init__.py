"""Mass-constrained obstacle problems on surfaces: limit profiles, solvers, sweeps."""

from __future__ import annotations

__version__ = "0.1.0"

from .domain import DomainSpec
from .profiles import ProfileField, ScalingExponents, scaling_exponents
from .signals import SignalField
from .vi_solver import ObstacleSolution, SolverError, SolverOptions, solve_mass_constrained

__all__ = ["DomainSpec", "ObstacleSolution", "ProfileField", "ScalingExponents", "SignalField",
           "SolverError", "SolverOptions", "scaling_exponents", "solve_mass_constrained",
           "__version__"]
