"""Acceptance suite: one test per criterion, run at the stated tolerances.

The Monte Carlo studies (7-9) take a few minutes each on one core.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from fracspde import cli
from fracspde import experiments as ex
from fracspde.config import parse_config
from fracspde.fem import CoefficientField, Mesh1D, assemble, build_mesh, spectral_factorize
from fracspde.mlf import MLParams, ml_eval, ml_matrix_action
from fracspde.noise import NoiseSpec, sample_path
from fracspde.scheme import FractionalParams, ProblemSpec, discretize, run

from test_scheme import scalar_oracle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FBM_SEED = 7
ITO_SEED = 11


def _rel(value, ref):
    # exp(-1000) underflows to zero in both
    return 0.0 if value == ref else abs(value - ref) / abs(ref)


def test_01_mittag_leffler_accuracy(acceptance):
    rows = ex.ml_validation_grid()
    worst = max(r.rel_error for r in rows)
    xs = np.logspace(-3, 3, 60)
    exp_err = max(_rel(ml_eval(MLParams(1, 1), -x).real, math.exp(-x)) for x in xs)
    r = np.sqrt(xs)
    cos_err = max(abs(ml_eval(MLParams(2, 1), -x * x).real - math.cos(x)) for x in r)
    rec = max(
        ex.recurrence_residual(MLParams(a, b), -x)
        for a in ex.ML_GRID_ALPHAS
        for b in sorted({a, 1.0})
        for x in xs
    )
    ok = worst <= 1e-10 and exp_err <= 1e-10 and cos_err <= 1e-10 and rec <= 1e-10
    acceptance(
        1, "Mittag-Leffler accuracy", ok,
        f"grid max rel err {worst:.2e}, exp {exp_err:.2e}, cos {cos_err:.2e}, recurrence {rec:.2e} (tol 1e-10)",
    )
    assert ok


def test_02_matrix_propagators(acceptance):
    asm = assemble(build_mesh(8), CoefficientField())
    fac = spectral_factorize(asm)
    w, u = np.linalg.eigh(asm.mass)
    m_half = u @ np.diag(w**0.5) @ u.T
    m_ihalf = u @ np.diag(w**-0.5) @ u.T
    lam, q = np.linalg.eigh(m_ihalf @ asm.stiffness @ m_ihalf)
    v = np.sin(np.pi * build_mesh(8).nodes) + build_mesh(8).nodes

    worst = 0.0
    for alpha, beta in [(0.75, 1.0), (0.75, 0.75)]:
        params = MLParams(alpha, beta)
        for t in np.logspace(-3, 0, 10):
            scale = t**alpha
            vals = np.array([ex.ml_reference(params, scale * l)[0] for l in lam])
            dense = m_ihalf @ q @ np.diag(vals) @ q.T @ m_half @ v
            got = ml_matrix_action(params, scale, fac, v)
            worst = max(worst, np.max(np.abs(got - dense)) / np.max(np.abs(dense)))
    ok = worst <= 1e-8
    acceptance(2, "matrix propagators", ok, f"max rel err {worst:.2e} over 20 (alpha, beta, t) (tol 1e-8)")
    assert ok


def test_03_contraction_bounds(acceptance):
    fac = spectral_factorize(assemble(build_mesh(63), CoefficientField()))
    t = np.logspace(-4, 1, 50)
    details, ok = [], True
    for alpha in (0.6, 0.75, 0.9):
        chk = ex.contraction_bounds(fac, alpha, t)
        ok = ok and chk.passed
        details.append(f"a={alpha}: {chk.max_s1:.4f}<=1, {chk.max_s2:.4f}<={chk.s2_bound:.4f}")
    acceptance(3, "contraction bounds", ok, "; ".join(details))
    assert ok


def test_04_smoothing_exponent(acceptance):
    fac = spectral_factorize(assemble(build_mesh(127), CoefficientField()))
    t = np.logspace(-6, 1, 141)
    details, ok = [], True
    for rho in (0.25, 0.5, 1.0):
        res = ex.smoothing_check(fac, 0.75, rho, t)
        good = abs(res.exponent + 0.75 * rho) <= 0.05
        ok = ok and good
        details.append(f"rho={rho}: {res.exponent:.4f} vs {-0.75 * rho:.4f}")
    acceptance(4, "smoothing exponent", ok, "; ".join(details) + " (tol 0.05)")
    assert ok


def test_05_fbm_sampler(acceptance):
    details, ok = [], True
    for hurst in (0.6, 0.75, 0.9):
        cov, var = ex.fbm_covariance_check(hurst, 1.0, 16, 10_000, FBM_SEED)
        good = cov.within(3.0) and var.within(3.0)
        ok = ok and good
        n_out = int(np.sum(cov.z_scores > 3.0))
        details.append(
            f"H={hurst}: max |z| cov {cov.z_scores.max():.2f} ({n_out}/136 beyond 3), var {var.z_scores[0]:.2f}"
        )
    acceptance(5, "fBm sampler covariance", ok, "; ".join(details))
    assert ok


def test_06_ito_isometry(acceptance):
    chk = ex.ito_isometry_check(NoiseSpec(0.75, n_modes=8), 1.0, 16, 10_000, ITO_SEED)
    ok = chk.within(3.0)
    acceptance(
        6, "Ito isometry", ok,
        f"mean {chk.estimate[0]:.5f} vs exact {chk.exact[0]:.5f}, |z| = {chk.z_scores[0]:.2f}",
    )
    assert ok


def _temporal(config_name):
    cfg = parse_config(CONFIGS / config_name)
    spec = cfg.problem_spec()
    assert ex.theoretical_rates(spec.fractional)[0] == pytest.approx(0.25 if "branch_a" in config_name else 0.4)
    from fracspde.scheme import wellposedness_check

    assert wellposedness_check(spec).passed
    levels = cfg.levels
    return ex.temporal_study(
        spec, Mesh1D(cfg.discretization["n"]), cfg.noise(), [spec.T / m for m in levels],
        cfg.study["ref"] // max(levels), cfg.study["n_mc"], cfg.seed,
    )


@pytest.mark.slow
def test_07_temporal_order_alpha_075(acceptance):
    rep = _temporal("temporal_branch_a.ini")
    ok = abs(rep.slope - 0.25) <= 0.15 and rep.ci_covers(0.25)
    acceptance(7, "temporal order alpha=0.75", ok, f"slope {rep.slope:.3f} +/- {rep.ci:.3f}, target 0.25 +/- 0.15")
    assert ok


@pytest.mark.slow
def test_08_temporal_order_alpha_06(acceptance):
    rep = _temporal("temporal_branch_b.ini")
    ok = abs(rep.slope - 0.4) <= 0.15
    acceptance(8, "temporal order alpha=0.6", ok, f"slope {rep.slope:.3f} +/- {rep.ci:.3f}, target 0.40 +/- 0.15")
    assert ok


@pytest.mark.slow
def test_09_spatial_order(acceptance):
    cfg = parse_config(CONFIGS / "spatial.ini")
    rep = ex.spatial_study(
        cfg.problem_spec(), cfg.noise(), cfg.levels, cfg.study["ref"], cfg.discretization["M"],
        cfg.study["n_mc"], cfg.seed,
    )
    ok = abs(rep.slope - 1.5) <= 0.3
    acceptance(9, "spatial order", ok, f"slope {rep.slope:.3f} +/- {rep.ci:.3f}, target 1.5 +/- 0.3")
    assert ok


DETERMINISM_CONFIG = """
[problem]
alpha = 0.75
hurst = 0.75
beta = 1.0
f = linear
f_c = -0.2
g = sin_profile
g_c = 0.2
phi = sin_profile
phi_c = 0.5

[discretization]
n = 15
M = 32
n_modes = 8

[study]
n_mc = 8
seed = 99
"""


def test_10_determinism(tmp_path, acceptance):
    cases = {
        "simulate": ("", ["trajectory.csv", "noise.csv"]),
        "converge-time": ("levels = 4, 8, 16\nref = 64\n", ["convergence.csv"]),
        "converge-space": ("levels = 3, 7, 15\nref = 31\n", ["convergence.csv"]),
        "check-noise": ("", ["noise_check.csv"]),
    }
    mismatched = []
    for sub, (extra, files) in cases.items():
        path = tmp_path / f"{sub}.ini"
        path.write_text(DETERMINISM_CONFIG.replace("seed = 99\n", "seed = 99\n" + extra))
        for run_id in ("a", "b"):
            cli.main([sub, "--config", str(path), "--out", str(tmp_path / sub / run_id)])
        for name in files:
            a = (tmp_path / sub / "a" / name).read_bytes()
            b = (tmp_path / sub / "b" / name).read_bytes()
            if not a or a != b:
                mismatched.append(f"{sub}/{name}")
    ok = not mismatched
    acceptance(10, "determinism", ok, "byte-identical data CSVs" if ok else f"differ: {mismatched}")
    assert ok


def test_11_scalar_oracle(acceptance):
    M = 32
    noise = NoiseSpec(0.75, n_modes=8)
    f = lambda x, u: -0.4 * np.sin(u) + 0.1 * x
    g = lambda x, u: 0.3 * np.cos(u)
    phi = lambda x: 0.5 + 0 * x
    x0 = lambda x: 4.0 * x * (1.0 - x)
    spec = ProblemSpec(FractionalParams(0.75, 0.75, 1.0), 1.0, f=f, g=g, phi=phi, x0=x0)
    path = sample_path(noise, 1.0, M, seed=2026)
    got = run(spec, discretize(spec, Mesh1D(1)), noise, path).states[:, 0]
    ref = scalar_oracle(M, f, g, phi, x0, path, noise)
    err = float(np.max(np.abs(got - ref) / np.abs(ref)))
    ok = err <= 1e-9
    acceptance(11, "scalar oracle equivalence", ok, f"max rel err {err:.2e} over {M} steps (tol 1e-9)")
    assert ok
