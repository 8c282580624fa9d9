"""P1 finite elements on the unit interval with homogeneous Dirichlet conditions.

The discrete operator is the pencil ``(S, M)``: ``A_h = M^{-1} S`` where ``M``
is the consistent mass matrix and ``S`` discretizes
``-(D u')' + q u' + c0 u``. Everything downstream works in the eigenbasis of
this pencil.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from fracspde.errors import NumericalError

ScalarField = Callable[[np.ndarray], np.ndarray]

# Gauss-Legendre rules on [0, 1]
_GAUSS2 = np.polynomial.legendre.leggauss(2)
_GAUSS4 = np.polynomial.legendre.leggauss(4)

COND_LIMIT = 1.0e8
RESIDUAL_LIMIT = 1.0e-10


def _rule(gauss: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss
    return (x + 1.0) / 2.0, w / 2.0


def _as_field(value: float | ScalarField) -> ScalarField:
    if callable(value):
        return value
    c = float(value)
    return lambda x: np.full(np.shape(x), c)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of (0, 1) described by its ``n`` interior nodes."""

    n: int
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"a mesh needs at least one interior node, got n={self.n}")
        object.__setattr__(self, "h", 1.0 / (self.n + 1))
        object.__setattr__(self, "nodes", np.arange(1, self.n + 1) * self.h)

    @property
    def vertices(self) -> np.ndarray:
        """All element vertices including the two boundary points."""
        return np.arange(self.n + 2) * self.h


def build_mesh(n: int) -> Mesh1D:
    if int(n) != n or n < 2:
        raise ValueError(f"build_mesh needs an integer n >= 2, got {n!r}")
    return Mesh1D(int(n))


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients of ``A u = -(D u')' + q u'`` plus the Garding shift ``c0``."""

    D: float | ScalarField = 1.0
    q: float | ScalarField = 0.0
    c0: float = 0.0
    c1: float = 1.0e-12

    def diffusion(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(_as_field(self.D)(x), dtype=float)

    def advection(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(_as_field(self.q)(x), dtype=float)

    @property
    def symmetric(self) -> bool:
        return not callable(self.q) and float(self.q) == 0.0


@dataclass(frozen=True)
class OperatorAssembly:
    mass: np.ndarray
    stiffness: np.ndarray
    mesh: Mesh1D

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.stiffness, self.stiffness.T))

    def mass_norm(self, v: np.ndarray) -> float | np.ndarray:
        """Discrete L2 norm ``sqrt(v^T M v)`` of a nodal vector (or along the last axis)."""
        v = np.asarray(v)
        sq = np.real(np.einsum("...i,ij,...j->...", v.conj(), self.mass, v))
        out = np.sqrt(np.maximum(sq, 0.0))
        return float(out) if out.ndim == 0 else out


def assemble(mesh: Mesh1D, coeff: CoefficientField) -> OperatorAssembly:
    """Assemble mass and stiffness with 2-point Gauss quadrature per element.

    Row ``j`` corresponds to the test function ``phi_j`` and column ``k`` to the
    trial function, so ``S[j, k] = a(phi_k, phi_j)``.
    """
    h = mesh.h
    xi, wq = _rule(_GAUSS2)
    left = mesh.vertices[:-1]
    xq = left[:, None] + h * xi[None, :]  # (n_elem, n_quad)

    dvals = coeff.diffusion(xq)
    bad = np.argwhere(~(dvals >= coeff.c1))
    if bad.size:
        e, k = bad[0]
        raise ValueError(
            f"ellipticity violated: D({xq[e, k]:.6g}) = {dvals[e, k]:.6g} < c1 = {coeff.c1:g}"
        )
    qvals = coeff.advection(xq)
    if not (np.all(np.isfinite(dvals)) and np.all(np.isfinite(qvals))):
        raise ValueError("coefficient functions must be finite at quadrature points")

    # local shape functions on the reference element and their derivatives
    shape = np.stack([1.0 - xi, xi])  # (2, n_quad)
    dshape = np.array([-1.0, 1.0]) / h

    m_loc = h * np.einsum("q,aq,bq->ab", wq, shape, shape)
    # a(phi_b, phi_a) = int D phi_b' phi_a' + int q phi_b' phi_a
    k_loc = h * np.einsum("eq,q->e", dvals, wq)[:, None, None] * np.outer(dshape, dshape)
    c_loc = h * np.einsum("eq,q,aq->ea", qvals, wq, shape)[:, :, None] * dshape[None, None, :]

    n = mesh.n
    full_m = np.zeros((n + 2, n + 2))
    full_s = np.zeros((n + 2, n + 2))
    for e in range(n + 1):
        idx = slice(e, e + 2)
        full_m[idx, idx] += m_loc
        full_s[idx, idx] += k_loc[e] + c_loc[e]

    mass = full_m[1:-1, 1:-1].copy()
    stiffness = full_s[1:-1, 1:-1] + coeff.c0 * mass
    return OperatorAssembly(mass=mass, stiffness=stiffness, mesh=mesh)


def load_vector(mesh: Mesh1D, f: ScalarField) -> np.ndarray:
    """``b_j = int f phi_j`` with 4-point Gauss quadrature per element."""
    h = mesh.h
    xi, wq = _rule(_GAUSS4)
    left = mesh.vertices[:-1]
    xq = left[:, None] + h * xi[None, :]
    fq = np.asarray(f(xq), dtype=float)
    if fq.shape != xq.shape:
        fq = np.broadcast_to(fq, xq.shape)

    # contributions to the left and right vertex of every element
    to_left = h * np.sum(fq * wq * (1.0 - xi), axis=1)
    to_right = h * np.sum(fq * wq * xi, axis=1)
    b = np.zeros(mesh.n + 2)
    b[:-1] += to_left
    b[1:] += to_right
    return b[1:-1]


def l2_project(mesh: Mesh1D, assembly: OperatorAssembly, f: ScalarField) -> np.ndarray:
    """Nodal coefficients of the L2 projection of ``f`` onto the P1 space."""
    b = load_vector(mesh, f)
    try:
        chol = sla.cho_factor(assembly.mass)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("mass matrix is singular") from exc
    return sla.cho_solve(chol, b)


@dataclass(frozen=True)
class SpectralFactorization:
    """Eigen-decomposition ``S V = M V diag(lambda)`` of the FEM pencil.

    Columns of ``right_vectors`` have unit Euclidean norm. Coordinates are
    obtained by solving against a stored LU factor of ``V``.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    condition: float
    lu: tuple[np.ndarray, np.ndarray] = field(repr=False)

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def to_eigen(self, v: np.ndarray) -> np.ndarray:
        """Coordinates ``V^{-1} v``; ``v`` may hold vectors in its columns."""
        return sla.lu_solve(self.lu, np.asarray(v, dtype=complex))

    def from_eigen(self, c: np.ndarray, imag_tol: float = 1.0e-10) -> np.ndarray:
        """Nodal vector ``V c``, real part extracted after an imaginary-residue check."""
        out = self.right_vectors @ c
        scale = np.max(np.abs(out), initial=0.0)
        residue = np.max(np.abs(out.imag), initial=0.0)
        if residue > imag_tol * max(scale, np.finfo(float).tiny):
            raise NumericalError(
                f"imaginary residue {residue:.3e} exceeds {imag_tol:g} x |result| = {scale:.3e}"
            )
        return out.real


def spectral_factorize(assembly: OperatorAssembly) -> SpectralFactorization:
    s, m = assembly.stiffness, assembly.mass
    if assembly.symmetric:
        lam, vec = sla.eigh(s, m)
        lam = lam.astype(complex)
        vec = vec.astype(complex)
    else:
        lam, vec = sla.eig(s, m)

    order = np.lexsort((lam.imag, lam.real))
    lam = lam[order]
    vec = vec[:, order]
    vec = vec / np.linalg.norm(vec, axis=0)

    if np.any(lam.real <= 0.0):
        worst = lam[np.argmin(lam.real)]
        raise NumericalError(
            f"coercivity violated: eigenvalue {worst:.6g} has non-positive real part; "
            "increase the Garding shift c0"
        )

    condition = float(np.linalg.cond(vec))
    if not condition <= COND_LIMIT:
        raise NumericalError(
            f"eigenvector matrix condition {condition:.3e} exceeds {COND_LIMIT:g}: "
            "near-defective operator"
        )

    residual = np.linalg.norm(s @ vec - m @ vec * lam[None, :], 2)
    if residual > RESIDUAL_LIMIT * np.linalg.norm(s, 2):
        raise NumericalError(f"pencil residual {residual:.3e} is too large")

    return SpectralFactorization(
        eigenvalues=lam, right_vectors=vec, condition=condition, lu=sla.lu_factor(vec)
    )


def frac_power_apply(fac: SpectralFactorization, gamma: float, v: np.ndarray) -> np.ndarray:
    """Apply ``A_h**gamma`` (principal branch) to the nodal vector ``v``."""
    if not -1.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [-1, 1], got {gamma}")
    coords = fac.to_eigen(v)
    return fac.from_eigen(fac.eigenvalues**gamma * coords)


def pencil_eigenvalues_closed_form(n: int) -> np.ndarray:
    """Eigenvalues of the P1 pencil for ``-u''`` on a uniform mesh, ascending."""
    h = 1.0 / (n + 1)
    k = np.arange(1, n + 1)
    c = np.cos(k * np.pi * h)
    return 6.0 / h**2 * (1.0 - c) / (2.0 + c)
