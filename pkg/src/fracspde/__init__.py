"""Finite-element fractional exponential integrator for time-fractional SPDEs.

Modules: :mod:`~fracspde.mlf` (Mittag-Leffler functions), :mod:`~fracspde.fem`
(P1 discretization), :mod:`~fracspde.noise` (Q-Wiener and fBm sampling),
:mod:`~fracspde.scheme` (the time stepper), :mod:`~fracspde.experiments`
(convergence studies and checks) and :mod:`~fracspde.cli`.
"""

from fracspde.errors import ConfigError, FracSPDEError, NumericalError
from fracspde.fem import CoefficientField, Mesh1D, assemble, build_mesh, spectral_factorize
from fracspde.mlf import MLParams, PropagatorCache, ml_eval, ml_matrix_action
from fracspde.noise import NoiseSpec, aggregate, sample_path
from fracspde.scheme import (
    FractionalParams,
    ProblemSpec,
    Trajectory,
    build_propagators,
    discretize,
    run,
    wellposedness_check,
)

__all__ = [
    "CoefficientField",
    "ConfigError",
    "FracSPDEError",
    "FractionalParams",
    "MLParams",
    "Mesh1D",
    "NoiseSpec",
    "NumericalError",
    "ProblemSpec",
    "PropagatorCache",
    "Trajectory",
    "aggregate",
    "assemble",
    "build_mesh",
    "build_propagators",
    "discretize",
    "ml_eval",
    "ml_matrix_action",
    "run",
    "sample_path",
    "spectral_factorize",
    "wellposedness_check",
]
