"""Fractional exponential integrator for the semilinear time-fractional SPDE.

The fully discrete approximation is

    X_m = S1(t_m) P X0 + dt sum_{j<m} (t_m - t_j)**(alpha-1) S2(t_m - t_j) P F(X_j)
          + sum_{j<m} S1(t_m - t_j) P G(X_j) dW_j + sum_{j<m} S1(t_m - t_j) P Phi dB_j

with ``S1(t) = E_{alpha,1}(-t**alpha A_h)`` and ``S2(t) = E_{alpha,alpha}(-t**alpha A_h)``.
Every load is moved to eigencoordinates once, when it becomes available, and
the history sums are plain lag convolutions of diagonal propagators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from fracspde.errors import NumericalError
from fracspde.fem import (
    CoefficientField,
    Mesh1D,
    OperatorAssembly,
    SpectralFactorization,
    assemble,
    l2_project,
    spectral_factorize,
)
from fracspde.mlf import MLParams, PropagatorCache, ml_eval_many
from fracspde.noise import NoisePath, NoiseSpec

Nemytskii = Callable[[np.ndarray, np.ndarray], np.ndarray]
SpatialFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FractionalParams:
    """Exponents of the model: Caputo order ``alpha``, Hurst index, and regularity ``beta``."""

    alpha: float
    hurst: float
    beta: float

    def __post_init__(self) -> None:
        problems = fractional_param_problems(self.alpha, self.hurst, self.beta)
        if problems:
            raise ValueError("; ".join(problems))


def fractional_param_problems(alpha: float, hurst: float, beta: float) -> list[str]:
    problems = []
    if not 0.5 < alpha < 1.0:
        problems.append(f"alpha={alpha} outside the Caputo order range (1/2, 1)")
    if not 0.5 < hurst < 1.0:
        problems.append(f"hurst={hurst} outside (1/2, 1)")
    elif not 1.0 - 2.0 * hurst < beta <= 1.0:
        problems.append(
            f"beta={beta} outside (1 - 2H, 1] = ({1.0 - 2.0 * hurst:g}, 1] "
            "required of the initial value and the additive noise coefficient"
        )
    return problems


def _zero_nemytskii(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.zeros_like(u)


def _zero_field(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


@dataclass(frozen=True)
class ProblemSpec:
    """``D_t^alpha X + A X = F(X) + I^{1-alpha}[G(X) dW/dt + Phi dB^H/dt]`` on (0, T]."""

    fractional: FractionalParams
    T: float
    f: Nemytskii = _zero_nemytskii
    g: Nemytskii = _zero_nemytskii
    phi: SpatialFunction = _zero_field
    lipschitz_L: float = 0.0
    x0: SpatialFunction = _zero_field
    coeff: CoefficientField = field(default_factory=CoefficientField)
    name: str = "problem"

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not self.lipschitz_L >= 0:
            raise ValueError(f"lipschitz_L must be non-negative, got {self.lipschitz_L}")

    def drift(self) -> Nemytskii:
        """``f`` with the Garding shift compensated: ``f(x, u) - c0 u``."""
        c0 = self.coeff.c0
        if c0 == 0.0:
            return self.f
        f = self.f
        return lambda x, u: f(x, u) - c0 * u


@dataclass(frozen=True)
class WellposednessDiagnostic:
    value: float
    passed: bool

    @property
    def flag(self) -> str:
        return "pass" if self.passed else "warn"


def wellposedness_check(spec: ProblemSpec) -> WellposednessDiagnostic:
    """Contraction constant of the fixed-point map; ``< 1`` guarantees a unique mild solution."""
    alpha, T, L = spec.fractional.alpha, spec.T, spec.lipschitz_L
    bound = alpha * math.gamma(2.0) / math.gamma(1.0 + alpha)
    value = 2.0 * L * (T ** (2.0 * alpha - 1.0) / (2.0 * alpha - 1.0) * bound**2 + 1.0)
    return WellposednessDiagnostic(value=value, passed=value < 1.0)


@dataclass(frozen=True)
class Discretization:
    mesh: Mesh1D
    assembly: OperatorAssembly
    fac: SpectralFactorization


def discretize(spec: ProblemSpec, mesh: Mesh1D) -> Discretization:
    assembly = assemble(mesh, spec.coeff)
    return Discretization(mesh=mesh, assembly=assembly, fac=spectral_factorize(assembly))


def build_propagators(fac: SpectralFactorization, alpha: float, dt: float, M: int) -> PropagatorCache:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if M < 1:
        raise ValueError(f"M must be positive, got {M}")

    lags = dt * np.arange(1, M + 1)
    powered = lags**alpha
    z = -powered[:, None] * fac.eigenvalues[None, :]
    s1 = ml_eval_many(MLParams(alpha, 1.0), z)
    s2 = ml_eval_many(MLParams(alpha, alpha), z)
    s2_weighted = (lags ** (alpha - 1.0))[:, None] * s2
    return PropagatorCache(lags=lags, s1_values=s1, s2_weighted=s2_weighted, alpha=alpha)


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    seed: int
    meta: dict[str, Any]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _check_cache(cache: PropagatorCache, alpha: float, path: NoisePath, n: int) -> None:
    if cache.alpha != alpha or cache.steps != path.steps or cache.s1_values.shape[1] != n:
        raise ValueError("propagator cache does not match the problem, mesh, or time grid")
    if not math.isclose(cache.dt, path.dt, rel_tol=1e-12):
        raise ValueError(f"propagator cache step {cache.dt} differs from path step {path.dt}")


def run(
    spec: ProblemSpec,
    disc: Discretization,
    noise: NoiseSpec,
    path: NoisePath,
    cache: PropagatorCache | None = None,
) -> Trajectory:
    """Advance the scheme over the grid of ``path``.

    ``f`` and ``g`` are evaluated exactly once per step, at the left endpoint,
    in increasing step order.
    """
    alpha = spec.fractional.alpha
    if not math.isclose(path.final_time, spec.T, rel_tol=1e-12):
        raise ValueError(f"noise path ends at {path.final_time}, problem at T={spec.T}")
    if noise.hurst != spec.fractional.hurst:
        raise ValueError(f"noise Hurst index {noise.hurst} differs from {spec.fractional.hurst}")
    if path.wiener.shape[0] != noise.n_modes:
        raise ValueError("noise path and noise spec disagree on the number of modes")

    M, dt = path.steps, path.dt
    x = disc.mesh.nodes
    fac = disc.fac
    if cache is None:
        cache = build_propagators(fac, alpha, dt, M)
    _check_cache(cache, alpha, path, fac.n)

    # nodal values of the mode-wise noise increments, shape (M, n)
    basis = noise.scaled_basis(x)
    dw_nodal = path.wiener.T @ basis
    db_nodal = path.fbm.T @ basis

    # lumped projection of nodal products is the nodal product itself
    phi = np.asarray(spec.phi(x), dtype=float) * np.ones_like(x)
    additive = fac.to_eigen((phi[None, :] * db_nodal).T).T

    drift = spec.drift()
    s1_rev = cache.s1_values[::-1]
    s2_rev = cache.s2_weighted[::-1]

    states = np.empty((M + 1, fac.n))
    states[0] = l2_project(disc.mesh, disc.assembly, spec.x0)
    start = fac.to_eigen(states[0])
    drift_coords = np.empty((M, fac.n), dtype=complex)
    noise_coords = np.empty((M, fac.n), dtype=complex)

    for m in range(1, M + 1):
        j = m - 1
        u = states[j]
        loads = np.empty((fac.n, 2))
        loads[:, 0] = dt * drift(x, u)
        loads[:, 1] = spec.g(x, u) * dw_nodal[j]
        if not np.all(np.isfinite(loads)):
            raise NumericalError(f"non-finite drift or noise load at step {m} (t={j * dt:.6g})")
        coords = fac.to_eigen(loads)
        drift_coords[j] = coords[:, 0]
        noise_coords[j] = coords[:, 1] + additive[j]

        lag = slice(M - m, M)
        total = (
            cache.s1_values[j] * start
            + np.einsum("ki,ki->i", s2_rev[lag], drift_coords[:m])
            + np.einsum("ki,ki->i", s1_rev[lag], noise_coords[:m])
        )
        try:
            state = fac.from_eigen(total)
        except NumericalError as exc:
            raise NumericalError(f"step {m}: {exc}") from exc
        if not np.all(np.isfinite(state)):
            raise NumericalError(
                f"non-finite state at step {m} (t={m * dt:.6g}); the scheme is unstable "
                "or the coefficients violate their assumptions"
            )
        states[m] = state

    meta = {
        "problem": spec.name,
        "alpha": alpha,
        "hurst": spec.fractional.hurst,
        "beta": spec.fractional.beta,
        "T": spec.T,
        "n": fac.n,
        "M": M,
        "n_modes": noise.n_modes,
        "decay": noise.decay,
    }
    return Trajectory(grid=path.grid.copy(), states=states, seed=path.seed, meta=meta)
