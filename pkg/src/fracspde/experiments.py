"""Monte Carlo strong-convergence studies and numerical checks of the analytic estimates.

Strong errors are root-mean-square mass-norm differences at the final time
against a coupled reference: a finer time grid driven by the aggregated same
noise (temporal), or a finer nested mesh driven by the same modal noise
(spatial). Slopes come from ordinary least squares on log-log data.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from fracspde.errors import NumericalError
from fracspde.fem import Mesh1D, SpectralFactorization
from fracspde.mlf import (
    MLParams,
    ml_eval,
    ml_eval_many,
    ml_quadrature_oracle,
    ml_series_oracle,
    s2_uniform_bound,
)
from fracspde.noise import NoiseSpec, aggregate, derive_seed, sample_path
from fracspde.scheme import (
    FractionalParams,
    ProblemSpec,
    build_propagators,
    discretize,
    run,
)

SAMPLE_TAG = 3
FAILURE_LIMIT = 0.01
CSV_COLUMNS = ("axis", "error", "stderr")


class StudyError(NumericalError):
    pass


def theoretical_rates(params: FractionalParams) -> tuple[float, float]:
    """Strong orders in time and space."""
    a, h, b = params.alpha, params.hurst, params.beta
    time_rate = min(a * (2.0 * h + b - 1.0), 2.0 - 2.0 * a) / 2.0
    space_rate = 2.0 * h + b - 1.0
    return time_rate, space_rate


# {{{ regression


@dataclass(frozen=True)
class RateFit:
    slope: float
    half_width: float
    intercept: float

    @property
    def interval(self) -> tuple[float, float]:
        return self.slope - self.half_width, self.slope + self.half_width


def fit_rate(axis: Sequence[float], errors: Sequence[float], confidence: float = 0.95) -> RateFit:
    """OLS fit of ``log error = c + slope log axis`` with a t-based confidence half-width."""
    axis = np.asarray(axis, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if axis.shape != errors.shape or axis.size < 3:
        raise ValueError(f"need at least 3 matching points to fit a rate, got {axis.size}")
    for v in (axis, errors):
        if not (np.all(v > 0) and np.all(np.isfinite(v))):
            raise ValueError("axis and errors must be strictly positive and finite")
    x, y = np.log(axis), np.log(errors)

    n = x.size
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("axis values must not all coincide")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    s2 = float(resid @ resid) / (n - 2)
    se = math.sqrt(s2 / sxx)
    tq = float(stats.t.ppf(0.5 + confidence / 2.0, n - 2))
    return RateFit(slope=slope, half_width=tq * se, intercept=intercept)


# }}}


# {{{ reports


@dataclass(frozen=True)
class ConvergenceReport:
    kind: str
    axis: list[float]
    error: list[float]
    stderr: list[float]
    slope: float
    ci: float
    theory_slope: float
    n_mc: int
    seeds: dict[str, Any]
    config: dict[str, Any] = field(default_factory=dict)
    failures: int = 0
    reduction: str = "fsum"

    @property
    def interval(self) -> tuple[float, float]:
        return self.slope - self.ci, self.slope + self.ci

    def ci_covers(self, value: float) -> bool:
        lo, hi = self.interval
        return lo <= value <= hi

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(self.axis, self.error, self.stderr):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def rms_with_stderr(squared: np.ndarray) -> tuple[float, float]:
    """RMS of per-sample errors and its delta-method standard error.

    Reduction uses compensated summation so the result does not depend on
    the order in which samples finished.
    """
    squared = np.asarray(squared, dtype=float)
    n = squared.size
    mean = math.fsum(squared) / n
    var = math.fsum((squared - mean) ** 2) / max(n - 1, 1)
    rms = math.sqrt(mean)
    se_mean = math.sqrt(var / n)
    return rms, (se_mean / (2.0 * rms) if rms > 0 else 0.0)


# }}}


# {{{ sample execution

# work items run in forked workers read their task from here
_TASK: Callable[[int], Any] | None = None


def _call_task(i: int) -> Any:
    assert _TASK is not None
    return _TASK(i)


def _map_samples(task: Callable[[int], Any], n: int, workers: int) -> list[Any]:
    global _TASK
    if workers <= 1 or n <= 1:
        return [task(i) for i in range(n)]
    _TASK = task
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers) as pool:
            return pool.map(_call_task, range(n))
    finally:
        _TASK = None


def sample_seeds(seed: int, n_mc: int) -> list[int]:
    return [derive_seed(seed, SAMPLE_TAG, s) for s in range(n_mc)]


def _guarded(fn: Callable[[int], np.ndarray]) -> Callable[[int], np.ndarray | None]:
    def wrapped(i: int) -> np.ndarray | None:
        try:
            return fn(i)
        except NumericalError:
            return None

    return wrapped


def _collect(results: list[np.ndarray | None], n_levels: int) -> tuple[np.ndarray, int]:
    good = [r for r in results if r is not None]
    failures = len(results) - len(good)
    if failures > FAILURE_LIMIT * len(results):
        raise StudyError(f"{failures} of {len(results)} sample runs failed")
    if not good:
        raise StudyError("no sample run succeeded")
    return np.array(good).reshape(len(good), n_levels), failures


# }}}


# {{{ temporal study


def _dyadic_steps(T: float, dt: float) -> int:
    ratio = T / dt
    M = int(round(ratio))
    if M < 1 or not math.isclose(ratio, M, rel_tol=1e-9) or M & (M - 1):
        raise ValueError(f"step {dt} is not a dyadic division of T={T}")
    return M


def temporal_study(
    spec: ProblemSpec,
    mesh: Mesh1D,
    noise: NoiseSpec,
    dt_levels: Sequence[float],
    ref_factor: int,
    n_mc: int,
    seed: int,
    workers: int = 1,
) -> ConvergenceReport:
    """Strong error at ``T`` for each step in ``dt_levels`` against a coupled fine run.

    The reference step is ``min(dt_levels) / ref_factor``.
    """
    if len(dt_levels) < 3:
        raise ValueError("temporal_study needs at least 3 levels to fit a rate")
    if ref_factor < 2 or ref_factor & (ref_factor - 1):
        raise ValueError(f"ref_factor must be a power of 2 above 1, got {ref_factor}")
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    steps = [_dyadic_steps(spec.T, dt) for dt in dt_levels]
    M_ref = max(steps) * ref_factor

    disc = discretize(spec, mesh)
    alpha = spec.fractional.alpha
    ref_cache = build_propagators(disc.fac, alpha, spec.T / M_ref, M_ref)
    caches = [build_propagators(disc.fac, alpha, spec.T / M, M) for M in steps]
    seeds = sample_seeds(seed, n_mc)

    def one(i: int) -> np.ndarray:
        fine = sample_path(noise, spec.T, M_ref, seeds[i])
        ref = run(spec, disc, noise, fine, ref_cache).final
        sq = np.empty(len(steps))
        for k, (M, cache) in enumerate(zip(steps, caches)):
            coarse = run(spec, disc, noise, aggregate(fine, M_ref // M), cache).final
            sq[k] = disc.assembly.mass_norm(ref - coarse) ** 2
        return sq

    squared, failures = _collect(_map_samples(_guarded(one), n_mc, workers), len(steps))
    rms, se = zip(*(rms_with_stderr(squared[:, k]) for k in range(len(steps))))
    axis = [spec.T / M for M in steps]
    fit = fit_rate(axis, rms)
    return ConvergenceReport(
        kind="temporal",
        axis=axis,
        error=list(rms),
        stderr=list(se),
        slope=fit.slope,
        ci=fit.half_width,
        theory_slope=theoretical_rates(spec.fractional)[0],
        n_mc=n_mc,
        seeds={"base": int(seed), "samples": seeds},
        config={"n": mesh.n, "reference_steps": M_ref, "steps": steps, **_noise_echo(noise)},
        failures=failures,
    )


def _noise_echo(noise: NoiseSpec) -> dict[str, Any]:
    return {"hurst": noise.hurst, "n_modes": noise.n_modes, "decay": noise.decay}


# }}}


# {{{ spatial study


def _nested(n: int) -> bool:
    return n >= 1 and (n + 1) & n == 0


def spatial_study(
    spec: ProblemSpec,
    noise: NoiseSpec,
    n_levels: Sequence[int],
    ref_n: int,
    M: int,
    n_mc: int,
    seed: int,
    workers: int = 1,
) -> ConvergenceReport:
    """Strong error at ``T`` on nested meshes against a finer reference mesh.

    The error on level ``n`` is the coarse mass norm of the difference between
    the coarse solution and the reference restricted to the coarse nodes.
    """
    if len(n_levels) < 3:
        raise ValueError("spatial_study needs at least 3 levels to fit a rate")
    bad = [n for n in [*n_levels, ref_n] if not _nested(n)]
    if bad:
        raise ValueError(f"mesh sizes must have the form 2**k - 1, got {bad}")
    if ref_n <= max(n_levels):
        raise ValueError(f"reference mesh n={ref_n} must be strictly finer than every level")
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")

    alpha = spec.fractional.alpha
    dt = spec.T / M
    discs = [discretize(spec, Mesh1D(n)) for n in n_levels]
    ref_disc = discretize(spec, Mesh1D(ref_n))
    caches = [build_propagators(d.fac, alpha, dt, M) for d in discs]
    ref_cache = build_propagators(ref_disc.fac, alpha, dt, M)
    seeds = sample_seeds(seed, n_mc)

    def one(i: int) -> np.ndarray:
        path = sample_path(noise, spec.T, M, seeds[i])
        ref = run(spec, ref_disc, noise, path, ref_cache).final
        sq = np.empty(len(discs))
        for k, (disc, cache) in enumerate(zip(discs, caches)):
            stride = (ref_n + 1) // (disc.mesh.n + 1)
            coarse = run(spec, disc, noise, path, cache).final
            sq[k] = disc.assembly.mass_norm(ref[stride - 1 :: stride] - coarse) ** 2
        return sq

    squared, failures = _collect(_map_samples(_guarded(one), n_mc, workers), len(discs))
    rms, se = zip(*(rms_with_stderr(squared[:, k]) for k in range(len(discs))))
    axis = [d.mesh.h for d in discs]
    fit = fit_rate(axis, rms)
    return ConvergenceReport(
        kind="spatial",
        axis=axis,
        error=list(rms),
        stderr=list(se),
        slope=fit.slope,
        ci=fit.half_width,
        theory_slope=theoretical_rates(spec.fractional)[1],
        n_mc=n_mc,
        seeds={"base": int(seed), "samples": seeds},
        config={"levels": list(n_levels), "reference_n": ref_n, "steps": M, **_noise_echo(noise)},
        failures=failures,
    )


# }}}


# {{{ analytic estimates


def increment_regularity(states: np.ndarray, dt: float, mass_norm: Callable, lags: Sequence[int]) -> RateFit:
    """Fit the exponent of the RMS increment ``||X(t + k dt) - X(t)||`` against ``k dt``.

    ``states`` has shape ``(samples, M + 1, n)`` or ``(M + 1, n)``.
    """
    states = np.asarray(states)
    if states.ndim == 2:
        states = states[None]
    sizes = []
    for k in lags:
        diff = states[:, k:] - states[:, :-k]
        sizes.append(math.sqrt(math.fsum(np.ravel(mass_norm(diff) ** 2)) / diff[..., 0].size))
    return fit_rate([k * dt for k in lags], sizes)


@dataclass(frozen=True)
class SmoothingResult:
    t: np.ndarray
    values: np.ndarray
    regime: np.ndarray
    exponent: float

    def scaled_max(self, alpha: float, rho: float) -> float:
        """``max_t m(t) t**(alpha rho)`` over the grid."""
        return float(np.max(self.values * self.t ** (alpha * rho)))


def smoothing_check(
    fac: SpectralFactorization,
    alpha: float,
    rho: float,
    t_grid: Sequence[float],
    lower: float = 0.1,
    upper: float = 100.0,
) -> SmoothingResult:
    """Exponent of ``m(t) = max_i lambda_i**rho E_{alpha,1}(-t**alpha lambda_i)``.

    The fit uses the singular regime where the spectrum resolves the
    transition: ``lambda_min t**alpha <= lower`` and ``lambda_max t**alpha >= upper``.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    lam = fac.eigenvalues
    if np.max(np.abs(lam.imag)) > 1e-12 * np.max(np.abs(lam)):
        raise ValueError("smoothing_check requires a real spectrum")
    lam = lam.real
    t = np.asarray(t_grid, dtype=float)
    e1 = ml_eval_many(MLParams(alpha, 1.0), -np.outer(t**alpha, lam)).real
    values = np.max(lam[None, :] ** rho * e1, axis=1)

    regime = (lam.min() * t**alpha <= lower) & (lam.max() * t**alpha >= upper)
    if np.count_nonzero(regime) < 3:
        raise ValueError("t_grid has fewer than 3 points in the singular regime")
    fit = fit_rate(t[regime], values[regime])
    return SmoothingResult(t=t, values=values, regime=regime, exponent=fit.slope)


@dataclass(frozen=True)
class BoundCheck:
    max_s1: float
    max_s2: float
    s2_bound: float

    @property
    def passed(self) -> bool:
        return self.max_s1 <= 1.0 + 1e-12 and self.max_s2 <= self.s2_bound + 1e-12


def contraction_bounds(fac: SpectralFactorization, alpha: float, t_grid: Sequence[float]) -> BoundCheck:
    """Largest values of ``E_{alpha,1}`` and ``E_{alpha,alpha}`` over the real spectrum."""
    lam = fac.eigenvalues.real
    z = -np.outer(np.asarray(t_grid, dtype=float) ** alpha, lam)
    s1 = ml_eval_many(MLParams(alpha, 1.0), z).real
    s2 = ml_eval_many(MLParams(alpha, alpha), z).real
    return BoundCheck(max_s1=float(s1.max()), max_s2=float(s2.max()), s2_bound=s2_uniform_bound(alpha))


@dataclass(frozen=True)
class MomentCheck:
    """Sample means of a statistic, their standard errors, and exact values."""

    estimate: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray

    @property
    def z_scores(self) -> np.ndarray:
        return np.abs(self.estimate - self.exact) / self.stderr

    def within(self, k: float = 3.0) -> bool:
        return bool(np.all(self.z_scores <= k))


def _moment(samples: np.ndarray, exact: np.ndarray) -> MomentCheck:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    return MomentCheck(
        estimate=samples.mean(axis=0),
        stderr=samples.std(axis=0, ddof=1) / math.sqrt(n),
        exact=np.asarray(exact, dtype=float),
    )


def fbm_covariance_check(
    hurst: float, T: float, M: int, n_paths: int, seed: int
) -> tuple[MomentCheck, MomentCheck]:
    """Sample increment covariance and ``Var B^H(T)`` against their exact values.

    Each path is a single-mode sample from :func:`sample_path`.
    """
    from fracspde.noise import fbm_increment_covariance, uniform_grid

    noise = NoiseSpec(hurst=hurst, n_modes=1)
    incs = np.empty((n_paths, M))
    for s, path_seed in enumerate(sample_seeds(seed, n_paths)):
        incs[s] = sample_path(noise, T, M, path_seed).fbm[0]
    iu = np.triu_indices(M)
    products = incs[:, iu[0]] * incs[:, iu[1]]
    cov = fbm_increment_covariance(hurst, uniform_grid(T, M))[iu]
    endpoint = incs.sum(axis=1) ** 2
    return _moment(products, cov), _moment(endpoint[:, None], np.array([T ** (2.0 * hurst)]))


def ito_isometry_check(
    noise: NoiseSpec, T: float, M: int, n_paths: int, seed: int, weights: np.ndarray | None = None
) -> MomentCheck:
    """``E ||sum_j c_j dW_j||^2 = sum_j c_j**2 tr(Q) dt`` for the step integrand ``c_j I``.

    The norm is computed in the orthonormal basis ``e_i`` so no spatial
    quadrature enters the check.
    """
    c = np.linspace(1.0, 2.0, M) if weights is None else np.asarray(weights, dtype=float)
    q = noise.eigenvalues
    sq = np.empty(n_paths)
    for s, path_seed in enumerate(sample_seeds(seed, n_paths)):
        dw = sample_path(noise, T, M, path_seed).wiener
        coeffs = np.sqrt(q) * (dw @ c)
        sq[s] = math.fsum(coeffs**2)
    exact = math.fsum(c**2) * noise.trace * T / M
    return _moment(sq[:, None], np.array([exact]))




# {{{ Mittag-Leffler validation

ML_GRID_ALPHAS = (0.55, 0.6, 0.75, 0.9, 1.0, 2.0)
ML_TOLERANCE = 1.0e-10
SERIES_ORACLE_LIMIT = 10.0


@dataclass(frozen=True)
class MLGridRow:
    alpha: float
    beta: float
    x: float
    value: float
    reference: float
    oracle: str

    @property
    def rel_error(self) -> float:
        if self.value == self.reference:
            # covers exp(-x) underflowing to zero in both
            return 0.0
        return abs(self.value - self.reference) / abs(self.reference)

    @property
    def passed(self) -> bool:
        return self.rel_error <= ML_TOLERANCE


def ml_reference(params: MLParams, x: float) -> tuple[float, str]:
    """Independent value of ``E_{alpha,beta}(-x)`` and the name of the oracle used."""
    a, b = params.alpha, params.beta
    if a == 1.0 and b == 1.0:
        return math.exp(-x), "exp"
    if a == 2.0 and b == 1.0:
        return math.cos(math.sqrt(x)), "cos"
    if a == 2.0 and b == 2.0:
        r = math.sqrt(x)
        return math.sin(r) / r, "sinc"
    if x <= SERIES_ORACLE_LIMIT or not (a < 1.0 and b < 1.0 + a):
        return ml_series_oracle(params, -x).real, "series"
    return ml_quadrature_oracle(params, x, dps=30), "quadrature"


def ml_validation_grid(
    alphas: Sequence[float] = ML_GRID_ALPHAS, xs: Sequence[float] | None = None
) -> list[MLGridRow]:
    """Compare :func:`ml_eval` with an oracle on ``z = -x`` for ``beta in {alpha, 1}``."""
    xs = np.logspace(-3.0, 3.0, 60) if xs is None else np.asarray(xs, dtype=float)
    rows = []
    for a in alphas:
        for b in sorted({a, 1.0}):
            params = MLParams(a, b)
            for x in xs:
                ref, oracle = ml_reference(params, float(x))
                value = ml_eval(params, -float(x)).real
                rows.append(MLGridRow(a, b, float(x), value, ref, oracle))
    return rows


def recurrence_residual(params: MLParams, z: complex) -> float:
    """Residual of ``E_{a,b}(z) = z E_{a,a+b}(z) + 1/Gamma(b)``.

    Scaled by the largest of the three terms: where ``E_{a,b}(z)`` is much
    smaller than ``1/Gamma(b)`` the right side cancels and no double
    precision value can do better than ``eps`` times that scale.
    """
    lhs = ml_eval(params, z)
    tail = z * ml_eval(MLParams(params.alpha, params.alpha + params.beta), z)
    const = 1.0 / math.gamma(params.beta)
    return abs(lhs - tail - const) / max(abs(lhs), abs(tail), abs(const))


# }}}

