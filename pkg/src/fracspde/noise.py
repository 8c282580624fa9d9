"""Truncated Karhunen-Loeve sampling of the Q-Wiener process and the fBm.

Both noises share the covariance ``Q e_i = q_i e_i`` with ``e_i(x) = sqrt(2) sin(i pi x)``
and ``q_i = i**(-decay)``, ``i = 1..n_modes``. Mode ``i`` of each process draws
from its own random substream, so paths are reproducible mode by mode and a
coarse path is obtained from a fine one by exact aggregation of increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from fracspde.errors import NumericalError

WIENER_TAG = 1
FBM_TAG = 2

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *labels: int) -> int:
    """Mix a base seed with integer labels into a 64-bit substream seed."""
    x = splitmix64(int(seed) & _MASK64)
    for label in labels:
        x = splitmix64(x ^ (int(label) & _MASK64))
    return x


@dataclass(frozen=True)
class NoiseSpec:
    hurst: float
    n_modes: int = 64
    decay: float = 3.0

    def __post_init__(self) -> None:
        if not 0.5 < self.hurst < 1.0:
            raise ValueError(f"hurst must lie in (1/2, 1), got {self.hurst}")
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be positive, got {self.n_modes}")
        if not self.decay > 1.0:
            raise ValueError(f"decay must exceed 1 for a trace-class Q, got {self.decay}")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.arange(1, self.n_modes + 1, dtype=float) ** (-self.decay)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def truncation_tail(self) -> float:
        """Trace of Q missed by the truncation, ``sum_{i > N} q_i`` (integral bound)."""
        r = self.decay
        return (self.n_modes + 0.5) ** (1.0 - r) / (r - 1.0)

    def basis(self, x: np.ndarray) -> np.ndarray:
        """``e_i(x)`` for every mode, shape ``(n_modes, len(x))``."""
        i = np.arange(1, self.n_modes + 1)[:, None]
        return np.sqrt(2.0) * np.sin(np.pi * i * np.asarray(x)[None, :])

    def scaled_basis(self, x: np.ndarray) -> np.ndarray:
        """``sqrt(q_i) e_i(x)``, shape ``(n_modes, len(x))``."""
        return np.sqrt(self.eigenvalues)[:, None] * self.basis(x)


@dataclass(frozen=True)
class NoisePath:
    """Per-mode increments on the grid ``t_j = j T / M``; arrays have shape ``(N, M)``."""

    grid: np.ndarray
    wiener: np.ndarray
    fbm: np.ndarray
    seed: int

    @property
    def steps(self) -> int:
        return self.wiener.shape[1]

    @property
    def final_time(self) -> float:
        return float(self.grid[-1])

    @property
    def dt(self) -> float:
        return self.final_time / self.steps


def uniform_grid(T: float, M: int) -> np.ndarray:
    return T * np.arange(M + 1) / M


def fbm_covariance(hurst: float, t: float, s: float) -> float:
    """``Cov(B^H(t), B^H(s))`` for a scalar fBm."""
    h2 = 2.0 * hurst
    return 0.5 * (abs(t) ** h2 + abs(s) ** h2 - abs(t - s) ** h2)


def fbm_increment_covariance(hurst: float, grid: np.ndarray) -> np.ndarray:
    """Exact covariance of the increments ``B^H(t_{j+1}) - B^H(t_j)``."""
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must lie in (0, 1), got {hurst}")
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(grid)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
        raise ValueError("fbm_increment_covariance supports uniform grids only")

    # stationary increments: Toeplitz in the lag d = j - k
    h2 = 2.0 * hurst
    d = np.abs(np.arange(steps.size)[:, None] - np.arange(steps.size)[None, :]).astype(float)
    rho = 0.5 * ((d + 1.0) ** h2 + np.abs(d - 1.0) ** h2 - 2.0 * d**h2)
    return steps[0] ** h2 * rho


@lru_cache(maxsize=32)
def _cholesky(hurst: float, T: float, M: int) -> np.ndarray:
    cov = fbm_increment_covariance(hurst, uniform_grid(T, M))
    try:
        return sla.cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"fBm increment covariance is not numerically SPD (H={hurst}, M={M}); "
            "use fewer steps or a circulant-embedding sampler"
        ) from exc


def sample_path(spec: NoiseSpec, T: float, M: int, seed: int) -> NoisePath:
    if M < 1:
        raise ValueError(f"M must be positive, got {M}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")

    dt = T / M
    chol = _cholesky(spec.hurst, float(T), int(M))
    wiener = np.empty((spec.n_modes, M))
    normals = np.empty((spec.n_modes, M))
    for i in range(spec.n_modes):
        rng = np.random.default_rng(derive_seed(seed, WIENER_TAG, i + 1))
        wiener[i] = math.sqrt(dt) * rng.standard_normal(M)
        rng = np.random.default_rng(derive_seed(seed, FBM_TAG, i + 1))
        normals[i] = rng.standard_normal(M)
    fbm = normals @ chol.T

    return NoisePath(grid=uniform_grid(T, M), wiener=wiener, fbm=fbm, seed=int(seed))


def _block_sums(x: np.ndarray, factor: int) -> np.ndarray:
    n, m = x.shape
    blocks = x.reshape(n, m // factor, factor)
    out = np.empty((n, m // factor))
    for i in range(n):
        for j in range(m // factor):
            out[i, j] = math.fsum(blocks[i, j])
    return out


def aggregate(path: NoisePath, factor: int) -> NoisePath:
    """Coarsen ``path`` by summing ``factor`` consecutive increments (correctly rounded)."""
    if factor < 1 or path.steps % factor != 0:
        raise ValueError(f"factor {factor} does not divide the number of steps {path.steps}")
    if factor == 1:
        return path
    return NoisePath(
        grid=uniform_grid(path.final_time, path.steps // factor),
        wiener=_block_sums(path.wiener, factor),
        fbm=_block_sums(path.fbm, factor),
        seed=path.seed,
    )
