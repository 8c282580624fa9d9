import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracspde.errors import NumericalError
from fracspde.fem import Mesh1D, assemble, CoefficientField, spectral_factorize, SpectralFactorization
from fracspde.mlf import (
    MLParams,
    ml_eval,
    ml_eval_many,
    ml_matrix_action,
    ml_quadrature_oracle,
    ml_series_oracle,
    s2_uniform_bound,
)
import scipy.linalg as sla

# E_{0.75,0.75}(-2.5): mpmath series at 60 digits, agrees with the quadrature oracle
E_075_075_M2P5 = 0.055222034307775475
# E_{0.75,0.75}(-50): 20-term asymptotic series at 50 digits, agrees with quadrature
E_075_075_M50 = 8.622138054716576e-05


def test_params_validation():
    with pytest.raises(ValueError):
        MLParams(0.0, 1.0)
    with pytest.raises(ValueError):
        MLParams(2.5, 1.0)
    with pytest.raises(ValueError):
        MLParams(0.5, 0.0)


def test_series_oracle_trivial():
    assert ml_series_oracle(MLParams(1, 1), 0) == 1
    assert ml_series_oracle(MLParams(1, 1), -1).real == pytest.approx(0.3678794411714423, rel=1e-15)


def test_series_oracle_frozen():
    v = ml_series_oracle(MLParams(0.75, 0.75), -2.5, tol=1e-16)
    assert v.real == pytest.approx(E_075_075_M2P5, rel=1e-15)
    assert ml_quadrature_oracle(MLParams(0.75, 0.75), 2.5) == pytest.approx(E_075_075_M2P5, rel=1e-14)


def test_series_oracle_rejects():
    with pytest.raises(ValueError):
        ml_series_oracle(MLParams(1, 1), -1, tol=1e-3)
    with pytest.raises(NumericalError, match="did not converge"):
        ml_series_oracle(MLParams(1, 1), -50, max_terms=20)


@pytest.mark.parametrize(
    "alpha, beta, z, expected",
    [
        (2.0, 1.0, -4.0, -0.4161468365471424),
        (0.75, 1.0, 0.0, 1.0),
        (0.75, 0.75, -2.5, E_075_075_M2P5),
        (0.75, 0.75, -50.0, E_075_075_M50),
        (1.0, 1.0, -700.0, math.exp(-700.0)),
    ],
)
def test_ml_eval_examples(alpha, beta, z, expected):
    assert ml_eval(MLParams(alpha, beta), z).real == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("x", [0.5, 3.0, 17.0, 120.0, 900.0])
def test_ml_eval_cos_identity(x):
    assert ml_eval(MLParams(2.0, 1.0), -x * x).real == pytest.approx(math.cos(x), abs=1e-10)


def test_ml_eval_complex_argument():
    # off the real axis, alpha > 1 has poles on the principal sheet
    for params, z in [(MLParams(0.8, 1.0), -20 + 5j), (MLParams(1.5, 1.0), 3 + 2j), (MLParams(0.6, 0.6), 2j)]:
        ref = ml_series_oracle(params, z)
        assert abs(ml_eval(params, z) - ref) <= 1e-11 * abs(ref)


def test_ml_eval_many_matches_scalar():
    params = MLParams(0.75, 0.75)
    z = -np.logspace(-3, 4, 200)
    many = ml_eval_many(params, z)
    scalar = np.array([ml_eval(params, v) for v in z])
    np.testing.assert_allclose(many, scalar, rtol=1e-13, atol=0)


def test_ml_eval_many_shape():
    z = -np.arange(1, 13, dtype=float).reshape(3, 4)
    assert ml_eval_many(MLParams(0.6, 1.0), z).shape == (3, 4)


@settings(max_examples=60, deadline=None)
@given(
    alpha=st.floats(0.52, 0.98),
    beta=st.floats(0.5, 1.5),
    x=st.floats(1e-3, 500.0),
)
def test_recurrence_property(alpha, beta, x):
    z = -x
    lhs = ml_eval(MLParams(alpha, beta), z)
    tail = z * ml_eval(MLParams(alpha, alpha + beta), z)
    const = 1.0 / math.gamma(beta)
    scale = max(abs(lhs), abs(tail), abs(const))
    assert abs(lhs - tail - const) <= 1e-10 * scale


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.51, 0.99), xs=st.lists(st.floats(0.0, 1e4), min_size=2, max_size=30))
def test_complete_monotonicity_surrogate(alpha, xs):
    xs = np.sort(np.array(xs))
    values = ml_eval_many(MLParams(alpha, 1.0), -xs)
    assert np.all(values.imag == 0)
    assert np.all((values.real > 0) & (values.real <= 1.0))
    assert np.all(np.diff(values.real) <= 1e-15)


def test_s2_uniform_bound_value():
    with mpmath.workdps(30):
        expected = float(mpmath.mpf("0.75") / mpmath.gamma(mpmath.mpf("1.75")))
    assert s2_uniform_bound(0.75) == pytest.approx(expected, rel=1e-15)
    assert s2_uniform_bound(0.75) == pytest.approx(0.8160489390982630, rel=1e-14)


# {{{ matrix actions


def _diagonal_factorization(lam):
    vec = np.eye(len(lam), dtype=complex)
    return SpectralFactorization(
        eigenvalues=np.asarray(lam, dtype=complex), right_vectors=vec, condition=1.0, lu=sla.lu_factor(vec)
    )


def test_matrix_action_diagonal_exponential():
    fac = _diagonal_factorization([1.0, 2.0])
    t = 0.7
    out = ml_matrix_action(MLParams(1, 1), t, fac, np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [math.exp(-t), math.exp(-2 * t)], rtol=1e-14)


def test_matrix_action_zero_scale():
    fac = spectral_factorize(assemble(Mesh1D(7), CoefficientField()))
    v = np.linspace(-1, 1, 7)
    out = ml_matrix_action(MLParams(0.75, 0.75), 0.0, fac, v)
    np.testing.assert_allclose(out, v / math.gamma(0.75), rtol=1e-12, atol=1e-15)


def _random_pencil(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    b = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n), b @ b.T + n * np.eye(n)


def test_matrix_action_random_spd_pencil():
    from fracspde.fem import OperatorAssembly

    s, m = _random_pencil(5, 3)
    asm = OperatorAssembly(mass=m, stiffness=s, mesh=Mesh1D(5))
    fac = spectral_factorize(asm)
    params = MLParams(0.75, 0.75)
    v = np.zeros(5)
    v[0] = 1.0
    got = ml_matrix_action(params, 0.3, fac, v)

    # brute force: M^{-1/2} S M^{-1/2} is symmetric
    w, u = np.linalg.eigh(m)
    m_half = u @ np.diag(w**0.5) @ u.T
    m_ihalf = u @ np.diag(w**-0.5) @ u.T
    lam, q = np.linalg.eigh(m_ihalf @ s @ m_ihalf)
    vals = np.array([ml_series_oracle(params, -0.3 * l).real for l in lam])
    expected = m_ihalf @ q @ np.diag(vals) @ q.T @ m_half @ v
    np.testing.assert_allclose(got, expected, rtol=1e-8, atol=1e-8 * np.max(np.abs(expected)))


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(-10, 10),
    b=st.floats(-10, 10),
    seed=st.integers(0, 2**32 - 1),
)
def test_matrix_action_linearity(a, b, seed):
    fac = _FAC_ADV
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, fac.n))
    params = MLParams(0.75, 1.0)
    lhs = ml_matrix_action(params, 0.05, fac, a * u + b * v)
    rhs = a * ml_matrix_action(params, 0.05, fac, u) + b * ml_matrix_action(params, 0.05, fac, v)
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-300)
    # relative to the size of the summands, which may cancel
    parts = abs(a) * np.max(np.abs(ml_matrix_action(params, 0.05, fac, u))) + abs(b) * np.max(
        np.abs(ml_matrix_action(params, 0.05, fac, v))
    )
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(scale, parts)


_FAC_ADV = spectral_factorize(assemble(Mesh1D(15), CoefficientField(q=3.0)))


def test_matrix_action_nonsymmetric_is_real():
    v = np.sin(np.pi * Mesh1D(15).nodes)
    out = ml_matrix_action(MLParams(0.75, 0.75), 0.1, _FAC_ADV, v)
    assert out.dtype == float and np.all(np.isfinite(out))


def test_matrix_action_shape_check():
    with pytest.raises(ValueError):
        ml_matrix_action(MLParams(0.75, 1.0), 0.1, _FAC_ADV, np.ones(3))


# }}}
