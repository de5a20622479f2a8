"""Dirac matrix algebra and pointwise symbol computations.

The symbol of the semiclassical Dirac operator with electro-magnetic
potential is a 4x4 Hermitian matrix field on phase space.  This module
builds the Dirac-Pauli matrices, the symbol itself, its two doubly
degenerate eigenvalue branches and the associated spectral projections.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]
CArray = NDArray[np.complex128]

SIGMA = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)


class MassGapError(ValueError):
    """Raised when |e(v+ - v-)| >= 2mc^2 at an evaluated point."""


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracMatrixSet:
    """Three alpha matrices and beta."""

    alpha: tuple[CArray, CArray, CArray]
    beta: CArray

    def matrices(self) -> list[CArray]:
        return [*self.alpha, self.beta]


@dataclass(frozen=True)
class PhysicalConfig:
    """Semiclassical parameter and physical constants (natural units by default).

    Parameters
    ----------
    h : float
        Semiclassical parameter in (0, 1].
    m, c : float
        Mass and speed of light, both positive.
    e : float
        Charge, negative.
    """

    h: float = 1.0
    m: float = 1.0
    c: float = 1.0
    e: float = -1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.h <= 1.0):
            raise ValueError(f"h must lie in (0, 1], got {self.h}")
        if self.m <= 0 or self.c <= 0:
            raise ValueError("m and c must be positive")
        if self.e >= 0:
            raise ValueError("the charge e must be negative")

    @property
    def mc2(self) -> float:
        return self.m * self.c**2

    def with_h(self, h: float) -> "PhysicalConfig":
        return replace(self, h=h)


def _zero_scalar(x):
    x = np.asarray(x)
    return np.zeros(x.shape[:-1], dtype=x.dtype if np.iscomplexobj(x) else float)


@dataclass(frozen=True)
class FieldConfig:
    """Electro-magnetic potential data.

    ``v_plus`` and ``v_minus`` map arrays of shape ``(..., 3)`` to ``(...)``;
    ``A`` maps ``(..., 3)`` to ``(..., 3)``.  Evaluators should accept complex
    arguments when the fields are used with a complex distortion.  ``radial``
    holds the underlying radial profile for spherically symmetric scalar
    fields and is ``None`` otherwise.
    """

    v_plus: Callable = _zero_scalar
    v_minus: Callable = _zero_scalar
    A: Optional[Callable] = None
    delta: float = np.inf
    R0: float = 0.0
    radial: Optional[object] = None
    name: str = "free"
    params: dict = field(default_factory=dict)

    @property
    def is_free(self) -> bool:
        return self.name == "free"

    def vector_potential(self, x) -> NDArray:
        x = np.asarray(x)
        if self.A is None:
            return np.zeros(x.shape, dtype=x.dtype if np.iscomplexobj(x) else float)
        return np.asarray(self.A(x))


FREE = FieldConfig()


@dataclass(frozen=True)
class SymbolPoint:
    """A phase-space point (x, xi) in R^3 x R^3."""

    x: Array
    xi: Array

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float).reshape(3)
        xi = np.asarray(self.xi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("symbol point coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)


# ---------------------------------------------------------------------------
# Matrix algebra
# ---------------------------------------------------------------------------


def standard_dirac_matrices() -> DiracMatrixSet:
    """Dirac-Pauli representation: alpha_j off-diagonal Pauli blocks, beta = diag(1,1,-1,-1)."""
    zero = np.zeros((2, 2), dtype=complex)
    alpha = tuple(np.block([[zero, s], [s, zero]]) for s in SIGMA)
    beta = np.block([[I2, zero], [zero, -I2]])
    return DiracMatrixSet(alpha=alpha, beta=beta)


def anticommutator_defect(mset: DiracMatrixSet) -> float:
    """Largest operator-norm violation of the Clifford relations."""
    mats = mset.matrices()
    worst = 0.0
    for i in range(4):
        for j in range(i, 4):
            ac = mats[i] @ mats[j] + mats[j] @ mats[i]
            if i == j:
                ac = ac - 2 * I4
            worst = max(worst, float(np.linalg.norm(ac, 2)))
    return worst


def charge_conjugation_matrix(mset: DiracMatrixSet) -> CArray:
    """U_c = i beta alpha_2."""
    return 1j * mset.beta @ mset.alpha[1]


def conjugated_matrix_set(mset: DiracMatrixSet) -> DiracMatrixSet:
    """Flip the signs of alpha_1 and alpha_3; alpha_2 and beta are unchanged."""
    a1, a2, a3 = mset.alpha
    return DiracMatrixSet(alpha=(-a1, a2, -a3), beta=mset.beta)


# ---------------------------------------------------------------------------
# Symbols
# ---------------------------------------------------------------------------


def _fields_at(nu: int, x: Array, fields: FieldConfig):
    if nu not in (0, 1):
        raise ValueError("nu must be 0 or 1")
    if nu == 0:
        return 0.0, 0.0, np.zeros(3)
    vp = float(np.real(fields.v_plus(x)))
    vm = float(np.real(fields.v_minus(x)))
    A = np.real(fields.vector_potential(x)).reshape(3)
    return vp, vm, A


def symbol(
    nu: int,
    p: SymbolPoint,
    fields: FieldConfig,
    phys: PhysicalConfig,
    mset: Optional[DiracMatrixSet] = None,
) -> CArray:
    """D_nu(x, xi) = alpha.(c xi - nu e A) + beta mc^2 + nu e diag(v+ I2, v- I2)."""
    mset = mset or standard_dirac_matrices()
    vp, vm, A = _fields_at(nu, p.x, fields)
    mom = phys.c * p.xi - nu * phys.e * A
    D = sum(mom[j] * mset.alpha[j] for j in range(3)) + phys.mc2 * mset.beta
    if nu:
        D = D + phys.e * np.diag([vp, vp, vm, vm]).astype(complex)
    return D


def _branch_data(nu, p, fields, phys):
    vp, vm, A = _fields_at(nu, p.x, fields)
    if nu and abs(phys.e * (vp - vm)) >= 2 * phys.mc2:
        raise MassGapError(f"mass gap violated at x={p.x}: |e(v+-v-)|={abs(phys.e*(vp-vm))}")
    mom = phys.c * p.xi - nu * phys.e * A
    p4 = phys.mc2 + nu * 0.5 * phys.e * (vp - vm)
    shift = nu * 0.5 * phys.e * (vp + vm)
    root = float(np.sqrt(mom @ mom + p4 * p4))
    return mom, p4, shift, root


def symbol_eigenvalues(nu, p, fields, phys) -> tuple[float, float]:
    """Closed-form branches H^+ and H^- of the symbol, each of multiplicity two."""
    _, _, shift, root = _branch_data(nu, p, fields, phys)
    return root + shift, -root + shift


def symbol_projections(nu, p, fields, phys, mset: Optional[DiracMatrixSet] = None):
    """Orthogonal projections onto the H^+ and H^- eigenspaces of D_nu.

    Uses Pi^pm = (1 + (D - shift) / (H^pm - shift)) / 2 where the shift is the
    scalar part nu e (v+ + v-)/2 of the symbol.
    """
    mset = mset or standard_dirac_matrices()
    mom, p4, shift, root = _branch_data(nu, p, fields, phys)
    if root < 1e-14:
        raise ZeroDivisionError(f"singular projection denominator at {p}")
    Q = sum(mom[j] * mset.alpha[j] for j in range(3)) + p4 * mset.beta
    Pp = 0.5 * (I4 + Q / root)
    Pm = 0.5 * (I4 - Q / root)
    return Pp, Pm


# ---------------------------------------------------------------------------
# Vectorised branch evaluation used by the phase-space integrators
# ---------------------------------------------------------------------------


def branch_energy(sign: int, x: NDArray, xi: NDArray, fields: FieldConfig, phys: PhysicalConfig) -> NDArray:
    """H_1^{sign}(x, xi) for arrays of points with trailing dimension 3."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    vp = np.real(fields.v_plus(x))
    vm = np.real(fields.v_minus(x))
    mom = phys.c * xi - phys.e * np.real(fields.vector_potential(x))
    p4 = phys.mc2 + 0.5 * phys.e * (vp - vm)
    return sign * np.sqrt(np.sum(mom * mom, axis=-1) + p4 * p4) + 0.5 * phys.e * (vp + vm)


def sample_mass_gap_margin(fields: FieldConfig, phys: PhysicalConfig, radii=None, n_dir: int = 16) -> float:
    """Smallest value of 2mc^2 - |e(v+ - v-)| on a sampled grid of points."""
    if radii is None:
        radii = np.concatenate([[0.0], np.logspace(-3, 3, 61)])
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(n_dir, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = radii[:, None, None] * dirs[None, :, :]
    diff = np.abs(phys.e * (np.real(fields.v_plus(pts)) - np.real(fields.v_minus(pts))))
    return float(2 * phys.mc2 - diff.max())
