"""Two-parameter Mittag-Leffler function and matrix propagators.

Scalar evaluation uses three routes:

* power series for ``|z| <= R_SERIES``,
* the asymptotic expansion (plus residues of the poles that live on the
  principal sheet) for ``|z| >= R_ASYMPTOTIC`` when ``alpha < 1`` and the
  truncated series reaches double precision,
* numerical inversion of the Laplace transform ``s**(alpha - beta) / (s**alpha - z)``
  on an optimal parabolic contour (Garrappa, SIAM J. Numer. Anal. 53, 2015)
  everywhere else.

Matrix functions ``E(-scale * A_h)`` are applied through a spectral
factorization of the finite-element pencil, see :mod:`fracspde.fem`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import mpmath
import numpy as np
from scipy.special import rgamma

from fracspde.errors import NumericalError

if TYPE_CHECKING:
    from fracspde.fem import SpectralFactorization

R_SERIES = 1.0
R_ASYMPTOTIC = 15.0

_LOG_EPS = math.log(np.finfo(float).eps)
_LOG_TOL = math.log(1.0e-15)
_MAX_ASYMPTOTIC_TERMS = 120


@dataclass(frozen=True)
class MLParams:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")


# {{{ oracles


def ml_series_oracle(
    params: MLParams, z: complex, tol: float = 1.0e-16, max_terms: int = 10_000
) -> complex:
    """Sum the defining power series in extended precision.

    The working precision is raised by the number of digits the largest term
    can cancel (about ``|z|**(1/alpha) / ln 10``), so the result is accurate to
    ``tol`` even where double precision summation would be useless. Meant as
    an oracle for ``|z| <= 100``.
    """
    if not 0.0 < tol <= 1.0e-6:
        raise ValueError(f"tol must lie in (0, 1e-6], got {tol}")
    zabs = abs(complex(z))
    extra = zabs ** (1.0 / params.alpha) / math.log(10.0) if zabs > 0 else 0.0
    with mpmath.workdps(int(30 + extra)):
        zz = mpmath.mpmathify(complex(z))
        a = mpmath.mpf(params.alpha)
        b = mpmath.mpf(params.beta)
        total = mpmath.mpf(0)
        power = mpmath.mpf(1)
        small = 0
        for k in range(max_terms):
            term = power * mpmath.rgamma(a * k + b)
            total += term
            if k > 0 and abs(term) <= tol * abs(total):
                small += 1
                if small == 3:
                    return complex(total)
            else:
                small = 0
            power *= zz
    raise NumericalError(
        f"Mittag-Leffler series did not converge in {max_terms} terms "
        f"(alpha={params.alpha}, beta={params.beta}, |z|={zabs:.3g}); "
        "argument outside the oracle range"
    )


def ml_quadrature_oracle(params: MLParams, x: float, dps: int = 40) -> float:
    """Evaluate ``E(-x)`` for ``x >= 0`` by quadrature of a real integral.

    Uses the representation valid for ``0 < alpha < 1``, ``beta < 1 + alpha``
    and ``|arg z| > alpha * pi``::

        E(z) = int_0^inf K(chi, z) dchi,
        K = chi**((1-beta)/alpha) exp(-chi**(1/alpha))
            (chi sin(pi (1-beta)) - z sin(pi (1-beta+alpha)))
            / (alpha pi (chi**2 - 2 chi z cos(alpha pi) + z**2)).
    """
    alpha, beta = params.alpha, params.beta
    if not (alpha < 1.0 and beta < 1.0 + alpha):
        raise ValueError("quadrature oracle needs alpha < 1 and beta < 1 + alpha")
    if x < 0:
        raise ValueError("quadrature oracle is for non-positive arguments only")
    if x == 0:
        return float(rgamma(beta))

    with mpmath.workdps(dps):
        a = mpmath.mpf(alpha)
        b = mpmath.mpf(beta)
        z = -mpmath.mpf(x)
        pi = mpmath.pi
        s1 = mpmath.sin(pi * (1 - b))
        s2 = mpmath.sin(pi * (1 - b + a))
        ca = mpmath.cos(a * pi)

        def kernel(chi):
            num = chi ** ((1 - b) / a) * mpmath.exp(-(chi ** (1 / a))) * (chi * s1 - z * s2)
            return num / (a * pi * (chi**2 - 2 * chi * z * ca + z**2))

        breaks = [0, 1, 10, 100, 1000, mpmath.inf]
        return float(mpmath.quad(kernel, breaks))


# }}}


# {{{ scalar evaluator


def _series(alpha: float, beta: float, z: complex) -> complex:
    # |z| <= 1: terms are bounded by 1/Gamma, no cancellation to speak of
    re_terms = []
    im_terms = []
    power = complex(1.0)
    for k in range(200):
        term = power * float(rgamma(alpha * k + beta))
        re_terms.append(term.real)
        im_terms.append(term.imag)
        if k > 2 and abs(term) < 1.0e-18 and abs(power) < 1.0:
            break
        power *= z
    return complex(math.fsum(re_terms), math.fsum(im_terms))


def _poles(alpha: float, z: complex) -> np.ndarray:
    """Roots ``s`` of ``s**alpha = z`` on the principal sheet ``|arg s| < pi``."""
    theta = cmath.phase(z)
    kmin = math.ceil(-alpha / 2.0 - theta / (2.0 * math.pi))
    kmax = math.floor(alpha / 2.0 - theta / (2.0 * math.pi))
    ks = np.arange(kmin, kmax + 1)
    return abs(z) ** (1.0 / alpha) * np.exp(1j * (theta + 2.0 * ks * math.pi) / alpha)


def _asymptotic_coefficients(alpha: float, beta: float) -> np.ndarray:
    k = np.arange(1, _MAX_ASYMPTOTIC_TERMS + 1)
    arg = beta - alpha * k
    coef = -rgamma(arg)
    # 1/Gamma vanishes at its poles; rounding would leave spurious tiny terms
    coef[(arg <= 0.0) & (np.abs(arg - np.round(arg)) < 1.0e-9)] = 0.0
    return coef


def _asymptotic_many(alpha: float, beta: float, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Asymptotic series ``-sum_k z**-k / Gamma(beta - alpha k)`` for many arguments.

    Only the algebraic part; callers add pole residues. Returns the values and
    a mask of entries where the truncated series reached double precision
    before its terms started to grow.
    """
    coef = _asymptotic_coefficients(alpha, beta)
    nz = coef != 0.0
    k = np.arange(1, _MAX_ASYMPTOTIC_TERMS + 1)[nz]
    z = np.asarray(z, dtype=complex)
    with np.errstate(under="ignore"):
        terms = coef[nz][None, :] * (1.0 / z[:, None]) ** k[None, :]
    sizes = np.abs(terms)
    partial = np.abs(np.cumsum(terms, axis=1))

    small = sizes <= 1.0e-17 * partial
    done = small.any(axis=1)
    stop = np.argmax(small, axis=1)
    growing = np.diff(sizes, axis=1) > 0.0
    # a growing term before the stopping index means we passed the optimal truncation
    before_stop = np.arange(growing.shape[1])[None, :] < stop[:, None]
    ok = done & ~np.any(growing & before_stop, axis=1)

    keep = np.arange(terms.shape[1])[None, :] <= stop[:, None]
    values = np.sum(np.where(keep, terms, 0.0), axis=1)
    return values, ok


def _asymptotic(alpha: float, beta: float, z: complex) -> complex | None:
    """Asymptotic expansion, or ``None`` if it cannot reach double precision."""
    poles = _poles(alpha, z)
    poles = poles[np.abs(np.angle(poles)) < math.pi * (1.0 - 1.0e-14)]
    residues = complex(np.sum(poles ** (1.0 - beta) * np.exp(poles)) / alpha)

    values, ok = _asymptotic_many(alpha, beta, np.array([z]))
    if not ok[0]:
        return None
    return complex(values[0]) + residues


def _optimal_param_rb(t, phi_j, phi_j1, pj, qj, log_epsilon):
    fac = 1.01
    f_max = math.exp(log_epsilon - _LOG_EPS)
    sq_j = math.sqrt(phi_j)
    threshold = 2.0 * math.sqrt((log_epsilon - _LOG_EPS) / t)
    sq_j1 = min(math.sqrt(phi_j1), threshold - sq_j)
    f_bar = 1.0

    if pj < 1.0e-14 and qj < 1.0e-14:
        sb_j, sb_j1 = sq_j, sq_j1
    elif pj < 1.0e-14:
        sb_j = sq_j
        f_min = fac * (sq_j / (sq_j1 - sq_j)) ** qj if sq_j > 0 else fac
        if f_min >= f_max:
            return 0.0, 0.0, math.inf
        f_bar = f_min + f_min / f_max * (f_max - f_min)
        fq = f_bar ** (-1.0 / qj)
        sb_j1 = (2.0 * sq_j1 - fq * sq_j) / (2.0 + fq)
    elif qj < 1.0e-14:
        sb_j1 = sq_j1
        f_min = fac * (sq_j1 / (sq_j1 - sq_j)) ** pj
        if f_min >= f_max:
            return 0.0, 0.0, math.inf
        f_bar = f_min + f_min / f_max * (f_max - f_min)
        fp = f_bar ** (-1.0 / pj)
        sb_j = (2.0 * sq_j + fp * sq_j1) / (2.0 - fp)
    else:
        f_min = fac * (sq_j + sq_j1) / (sq_j1 - sq_j) ** max(pj, qj)
        if f_min >= f_max:
            return 0.0, 0.0, math.inf
        f_min = max(f_min, 1.5)
        f_bar = f_min + f_min / f_max * (f_max - f_min)
        fp = f_bar ** (-1.0 / pj)
        fq = f_bar ** (-1.0 / qj)
        w = -phi_j1 * t / log_epsilon
        den = 2.0 + w - (1.0 + w) * fp + fq
        sb_j = ((2.0 + w + fq) * sq_j + fp * sq_j1) / den
        sb_j1 = (-(1.0 + w) * fq * sq_j + (2.0 + w - (1.0 + w) * fp) * sq_j1) / den

    log_epsilon = log_epsilon - math.log(f_bar)
    w = -(sb_j1**2) * t / log_epsilon
    mu = (((1.0 + w) * sb_j + sb_j1) / (2.0 + w)) ** 2
    h = -2.0 * math.pi / log_epsilon * (sb_j1 - sb_j) / ((1.0 + w) * sb_j + sb_j1)
    n = math.ceil(math.sqrt(1.0 - log_epsilon / t / mu) / h)
    return mu, h, n


def _optimal_param_ru(t, phi_j, pj, log_epsilon):
    sq_j = math.sqrt(phi_j)
    phib = phi_j * 1.01 if phi_j > 0 else 0.01
    sqb = math.sqrt(phib)
    f_min, f_max, f_tar = 1.0, 10.0, 5.0

    while True:
        phi_t = phib * t
        le = log_epsilon / phi_t
        n = math.ceil(phi_t / math.pi * (1.0 - 1.5 * le + math.sqrt(1.0 - 2.0 * le)))
        a = math.pi * n / phi_t
        sq_mu = sqb * abs(4.0 - a) / abs(7.0 - math.sqrt(1.0 + 12.0 * a))
        fbar = ((sqb - sq_j) / sq_mu) ** (-pj)
        if pj < 1.0e-14 or f_min < fbar < f_max:
            break
        sqb = f_tar ** (-1.0 / pj) * sq_mu + sq_j
        phib = sqb**2

    mu = sq_mu**2
    h = (-3.0 * a - 2.0 + 2.0 * math.sqrt(1.0 + 12.0 * a)) / (4.0 - a) / n

    # keep round-off under control for large mu
    threshold = (log_epsilon - _LOG_EPS) / t
    if mu > threshold:
        qq = 0.0 if abs(pj) < 1.0e-14 else f_tar ** (-1.0 / pj) * math.sqrt(mu)
        phib = (qq + sq_j) ** 2
        if phib < threshold:
            w = math.sqrt(_LOG_EPS / (_LOG_EPS - log_epsilon))
            u = math.sqrt(-phib * t / _LOG_EPS)
            mu = threshold
            n = math.ceil(w * log_epsilon / 2.0 / math.pi / (u * w - 1.0))
            h = math.sqrt(_LOG_EPS / (_LOG_EPS - log_epsilon)) / n
        else:
            n, h = math.inf, 0.0
    return mu, h, n


@dataclass(frozen=True)
class _Contour:
    nodes: np.ndarray
    weights: np.ndarray
    residue_poles: np.ndarray


def _contour(alpha: float, beta: float, z: complex) -> _Contour:
    poles = _poles(alpha, z)
    phi = (poles.real + np.abs(poles)) / 2.0
    order = np.argsort(phi, kind="stable")
    poles, phi = poles[order], phi[order]
    keep = phi > 1.0e-15
    poles = np.concatenate([[0.0], poles[keep]])
    phi = np.concatenate([[0.0], phi[keep], [math.inf]])

    j1 = len(poles)
    p = [max(0.0, -2.0 * (alpha - beta + 1.0))] + [1.0] * (j1 - 1)
    q = [1.0] * (j1 - 1) + [math.inf]
    admissible = [
        j for j in range(j1) if phi[j] < (_LOG_TOL - _LOG_EPS) and phi[j] < phi[j + 1]
    ]

    log_epsilon = _LOG_TOL
    while True:
        best = None
        for j in admissible:
            if j < j1 - 1:
                mu, h, n = _optimal_param_rb(1.0, phi[j], phi[j + 1], p[j], q[j], log_epsilon)
            else:
                mu, h, n = _optimal_param_ru(1.0, phi[j], p[j], log_epsilon)
            if best is None or n < best[2]:
                best = (mu, h, n, j)
        if best is None:
            raise NumericalError(f"no admissible contour for z={z} (alpha={alpha})")
        if best[2] <= 200:
            break
        log_epsilon += math.log(10.0)
        if log_epsilon > -2.0:
            raise NumericalError(f"contour route failed for z={z} (alpha={alpha})")

    mu, h, n, j = best
    u = h * np.arange(-n, n + 1)
    s = mu * (1j * u + 1.0) ** 2
    ds = 2.0 * mu * (1j - u)
    weights = h / (2j * math.pi) * np.exp(s) * s ** (alpha - beta) * ds
    return _Contour(nodes=s, weights=weights, residue_poles=poles[j + 1 :])


def _laplace_inversion(alpha: float, beta: float, z: complex) -> complex:
    c = _contour(alpha, beta, z)
    integral = np.sum(c.weights / (c.nodes**alpha - z))
    res = np.sum(c.residue_poles ** (1.0 - beta) * np.exp(c.residue_poles)) / alpha
    return complex(integral + res)


def ml_eval(params: MLParams, z: complex) -> complex:
    """Evaluate ``E_{alpha,beta}(z)`` for a scalar argument.

    Real arguments give results with an exactly zero imaginary part.
    """
    z = complex(z)
    if not cmath.isfinite(z):
        raise ValueError(f"argument must be finite, got {z}")
    value = _ml_eval(params, z)
    return complex(value.real, 0.0) if z.imag == 0.0 else value


def _ml_eval(params: MLParams, z: complex) -> complex:
    alpha, beta = params.alpha, params.beta

    if z == 0:
        return complex(rgamma(beta))
    if alpha == 1.0 and beta == 1.0:
        return cmath.exp(z)
    if abs(z) <= R_SERIES:
        return _series(alpha, beta, z)

    if alpha < 1.0 and abs(z) >= R_ASYMPTOTIC:
        if abs(cmath.phase(-z)) < math.pi * (1.0 - alpha / 2.0):
            value = _asymptotic(alpha, beta, z)
            if value is not None:
                return value

    try:
        return _laplace_inversion(alpha, beta, z)
    except (NumericalError, FloatingPointError, ZeroDivisionError) as exc:
        raise NumericalError(
            f"all Mittag-Leffler routes failed at z={z} "
            f"(alpha={alpha}, beta={beta}, |z|={abs(z):.3g}): {exc}"
        ) from exc


def ml_eval_many(params: MLParams, z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`ml_eval`.

    Arguments on the negative real axis are batched: for ``alpha <= 1`` there
    are no poles on the principal sheet, so the asymptotic series and the
    contour depend on ``(alpha, beta)`` only. Everything else goes through the
    scalar evaluator.
    """
    z = np.asarray(z, dtype=complex)
    flat_z = z.ravel()
    flat = np.empty(flat_z.shape, dtype=complex)
    alpha, beta = params.alpha, params.beta

    pending = np.ones(flat_z.shape, dtype=bool)
    if alpha <= 1.0 and not (alpha == 1.0 and beta == 1.0):
        negative = (flat_z.imag == 0.0) & (flat_z.real < -R_SERIES)

        if alpha < 1.0:
            far = negative & (flat_z.real <= -R_ASYMPTOTIC)
            idx = np.flatnonzero(far)
            if idx.size:
                values, ok = _asymptotic_many(alpha, beta, flat_z[idx])
                flat[idx[ok]] = values[ok]
                pending[idx[ok]] = False

        idx = np.flatnonzero(negative & pending)
        if idx.size:
            c = _contour(alpha, beta, complex(-2.0 * R_SERIES))
            denom = c.nodes[None, :] ** alpha - flat_z[idx, None]
            flat[idx] = (c.weights[None, :] / denom).sum(axis=1)
            pending[idx] = False

    for i in np.flatnonzero(pending):
        flat[i] = ml_eval(params, flat_z[i])
    flat.imag[flat_z.imag == 0.0] = 0.0
    return flat.reshape(z.shape)


# }}}


# {{{ matrix functions


@dataclass(frozen=True)
class PropagatorCache:
    """Spectral propagator values on the lags ``t_k = k dt``, ``k = 1..M``.

    Row ``k - 1`` of ``s1_values`` holds ``E_{alpha,1}(-t_k**alpha lambda_i)``
    and of ``s2_weighted`` holds ``t_k**(alpha - 1) E_{alpha,alpha}(-t_k**alpha lambda_i)``.
    """

    lags: np.ndarray
    s1_values: np.ndarray
    s2_weighted: np.ndarray
    alpha: float

    @property
    def steps(self) -> int:
        return self.lags.shape[0]

    @property
    def dt(self) -> float:
        return float(self.lags[0])



def spectral_values(params: MLParams, scale: float, fac: SpectralFactorization) -> np.ndarray:
    """Return ``E(-scale * lambda_i)`` for every eigenvalue of ``fac``."""
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    return ml_eval_many(params, -scale * fac.eigenvalues)


def ml_matrix_action(
    params: MLParams, scale: float, fac: SpectralFactorization, v: np.ndarray
) -> np.ndarray:
    """Apply ``E_{alpha,beta}(-scale * A_h)`` to the nodal vector ``v``."""
    v = np.asarray(v)
    if v.shape != (fac.n,):
        raise ValueError(f"expected a vector of length {fac.n}, got shape {v.shape}")

    coords = fac.to_eigen(v)
    return fac.from_eigen(spectral_values(params, scale, fac) * coords)


def s2_uniform_bound(alpha: float) -> float:
    """Uniform bound ``alpha Gamma(2) / Gamma(1 + alpha)`` on ``E_{alpha,alpha}``."""
    return alpha * math.gamma(2.0) / math.gamma(1.0 + alpha)


# }}}
