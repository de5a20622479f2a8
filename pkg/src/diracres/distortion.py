"""Analytic distortion family x -> x + theta g(x) and the distorted symbol.

The scaling function g vanishes on a ball of radius R0, equals the identity
beyond K_radius and is a radial quintic Hermite interpolant in between.
The same radial profile drives the exterior complex scaling of the radial
model, so the two stay consistent.
"""
from __future__ import annotations

import cmath
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .dirac_core import (
    DiracMatrixSet,
    FieldConfig,
    PhysicalConfig,
    SymbolPoint,
    standard_dirac_matrices,
)

BRANCH_TOL = 1e-12


class DistortionError(ValueError):
    """Invalid distortion parameter or evaluation outside the admissible set."""


def admissible_radius(epsilon: float) -> float:
    """r_eps = eps / sqrt(1 + eps^2) for eps in (0, 1)."""
    if not (0.0 < epsilon < 1.0):
        raise DistortionError(f"epsilon must lie in (0, 1), got {epsilon}")
    return epsilon / np.sqrt(1.0 + epsilon**2)


@dataclass(frozen=True)
class ScalingSpec:
    R0: float
    K_radius: float
    profile: str = "quintic"

    def __post_init__(self) -> None:
        if not (0.0 < self.R0 < self.K_radius):
            raise DistortionError("need 0 < R0 < K_radius")
        if self.profile != "quintic":
            raise DistortionError(f"unknown interpolation profile {self.profile!r}")


@dataclass(frozen=True)
class DistortionParam:
    theta: complex
    epsilon: float = 0.75

    def __post_init__(self) -> None:
        r_eps = admissible_radius(self.epsilon)
        if abs(self.theta) > r_eps + 1e-15:
            raise DistortionError(f"|theta|={abs(self.theta):.4g} exceeds r_eps={r_eps:.4g}")


class RadialScaling:
    """Radial profile g_r of the scaling function with two derivatives.

    Examples
    --------
    >>> g = RadialScaling(ScalingSpec(2.0, 4.0))
    >>> float(g.value(1.0)), float(g.value(5.0))
    (0.0, 5.0)
    """

    def __init__(self, spec: ScalingSpec):
        self.spec = spec
        L = spec.K_radius - spec.R0
        # G(t) = a t^3 + b t^4 + c t^5 with G(1)=K, G'(1)=L, G''(1)=0.
        mat = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
        self._coef = np.linalg.solve(mat, np.array([spec.K_radius, L, 0.0]))
        self._L = L

    def _t(self, r):
        return np.clip((np.asarray(r, dtype=float) - self.spec.R0) / self._L, 0.0, 1.0)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        t = self._t(r)
        a, b, c = self._coef
        mid = t**3 * (a + t * (b + c * t))
        return np.where(r >= self.spec.K_radius, r, np.where(r <= self.spec.R0, 0.0, mid))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        t = self._t(r)
        a, b, c = self._coef
        mid = t**2 * (3 * a + t * (4 * b + 5 * c * t)) / self._L
        return np.where(r >= self.spec.K_radius, 1.0, np.where(r <= self.spec.R0, 0.0, mid))

    def second_derivative(self, r):
        r = np.asarray(r, dtype=float)
        t = self._t(r)
        a, b, c = self._coef
        mid = t * (6 * a + t * (12 * b + 20 * c * t)) / self._L**2
        inside = (r > self.spec.R0) & (r < self.spec.K_radius)
        return np.where(inside, mid, 0.0)

    @cached_property
    def gradient_bound(self) -> float:
        """M^{-1} = sup ||grad g|| by dense radial sampling."""
        r = np.linspace(self.spec.R0, self.spec.K_radius, 20001)[1:]
        return float(max(np.abs(self.derivative(r)).max(), np.abs(self.value(r) / r).max(), 1.0))


class ScalingFunction:
    """Radial vector field g(x) = g_r(|x|) x/|x| with its Jacobian."""

    def __init__(self, spec: ScalingSpec):
        self.spec = spec
        self.radial = RadialScaling(spec)

    @property
    def M_inverse(self) -> float:
        return self.radial.gradient_bound

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        return x * (self.radial.value(r) / safe)[..., None]

    def jacobian(self, x):
        x = np.asarray(x, dtype=float).reshape(3)
        r = float(np.linalg.norm(x))
        if r == 0.0:
            return np.zeros((3, 3))
        xh = x / r
        gp = float(self.radial.derivative(r))
        gr = float(self.radial.value(r)) / r
        P = np.outer(xh, xh)
        return gp * P + gr * (np.eye(3) - P)


def scaling_function(spec: ScalingSpec) -> ScalingFunction:
    return ScalingFunction(spec)


def _check_theta(d: DistortionParam, g: ScalingFunction) -> None:
    if abs(d.theta) * g.M_inverse >= 1.0:
        raise DistortionError(
            f"|theta|={abs(d.theta):.4g} must stay below M={1.0 / g.M_inverse:.4g}"
        )


def _jac_det_radial(theta: complex, g: RadialScaling, r: float) -> complex:
    if r == 0.0:
        return 1.0 + 0j
    return complex((1 + theta * g.derivative(r)) * (1 + theta * g.value(r) / r) ** 2)


def distort_point(d: DistortionParam, spec: ScalingSpec, x):
    """Return (phi_theta(x), det(I + theta grad g(x)))."""
    g = ScalingFunction(spec)
    _check_theta(d, g)
    x = np.asarray(x, dtype=float).reshape(3)
    phi = x + d.theta * g(x)
    return phi.astype(complex), _jac_det_radial(d.theta, g.radial, float(np.linalg.norm(x)))


# ---------------------------------------------------------------------------
# Essential-spectrum curves and the sector swept by them
# ---------------------------------------------------------------------------


def principal_sqrt(z: complex) -> complex:
    """Square root with Re >= 0 (the principal branch)."""
    return cmath.sqrt(z)


def essential_curve(theta: complex, lam, phys: PhysicalConfig):
    """Points of Gamma_theta: +-c sqrt(lam/(1+theta)^2 + m^2c^2)."""
    if 1 + theta == 0:
        raise DistortionError("1 + theta must be nonzero")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("lam must be nonnegative")
    root = phys.c * np.sqrt(lam / (1 + theta) ** 2 + (phys.m * phys.c) ** 2 + 0j)
    if root.ndim == 0:
        return complex(root), complex(-root)
    return root, -root


def in_sector_S(z: complex, theta0: complex, epsilon: float, phys: Optional[PhysicalConfig] = None) -> bool:
    """Whether z lies on a curve Gamma_theta swept strictly inside S_theta0.

    A point on either branch satisfies (z/c)^2 - m^2c^2 = lam (1+theta)^-2,
    which fixes arg(1+theta) = -arg((z/c)^2 - m^2c^2)/2 and leaves |1+theta|
    free.  Membership then reduces to the existence of a modulus
    rho > |1+theta0| whose point rho*exp(i phi) - 1 stays in the admissible
    closed half-disc.  Points of the real axis and of Gamma_theta0 itself are
    excluded.
    """
    phys = phys or PhysicalConfig()
    r_eps = admissible_radius(epsilon)
    w = (z / phys.c) ** 2 - (phys.m * phys.c) ** 2
    if abs(w) < 1e-300:
        return False
    phi = -cmath.phase(w) / 2.0
    phi0 = cmath.phase(1 + theta0)
    tol = 1e-12 * max(1.0, abs(phi0))
    if not (tol < phi < phi0 - tol):
        return False
    rho0 = abs(1 + theta0)
    # f(rho) = |rho e^{i phi} - 1|^2 restricted to rho > rho0
    if np.cos(phi) > rho0:
        fmin = np.sin(phi) ** 2
        return bool(fmin <= r_eps**2)
    f0 = rho0**2 - 2 * rho0 * np.cos(phi) + 1.0
    return bool(f0 < r_eps**2)


# ---------------------------------------------------------------------------
# Distorted principal symbol
# ---------------------------------------------------------------------------


def _jac_det_gradient(theta: complex, g: RadialScaling, x: np.ndarray) -> np.ndarray:
    r = float(np.linalg.norm(x))
    if r == 0.0 or r <= g.spec.R0 or r >= g.spec.K_radius:
        return np.zeros(3, dtype=complex)
    gp = float(g.derivative(r))
    gpp = float(g.second_derivative(r))
    q = float(g.value(r)) / r
    dq = (gp - q) / r
    dJ = theta * gpp * (1 + theta * q) ** 2 + (1 + theta * gp) * 2 * (1 + theta * q) * theta * dq
    return dJ * x / r


def distorted_momentum(d: DistortionParam, spec: ScalingSpec, p: SymbolPoint, phys: PhysicalConfig):
    """zeta_theta(x, xi) = c (I + theta grad g(x))^{-T} xi."""
    g = ScalingFunction(spec)
    Dphi = np.eye(3) + d.theta * g.jacobian(p.x)
    return phys.c * np.linalg.solve(Dphi.T, p.xi.astype(complex))


def distorted_symbol(
    d: DistortionParam,
    spec: ScalingSpec,
    p: SymbolPoint,
    fields: FieldConfig,
    phys: PhysicalConfig,
    mset: Optional[DiracMatrixSet] = None,
):
    """Principal symbol of the distorted operator H_theta at (x, xi).

    alpha.zeta + mc^2 beta + V(phi_theta(x)) - (c/2) sum_j alpha_j J^{-1} d_j J,
    with V = -e alpha.A + e diag(v+ I2, v- I2) evaluated at the complex point.
    """
    mset = mset or standard_dirac_matrices()
    g = ScalingFunction(spec)
    _check_theta(d, g)
    phi, J = distort_point(d, spec, p.x)
    zeta = distorted_momentum(d, spec, p, phys)
    M = sum(zeta[j] * mset.alpha[j] for j in range(3)) + phys.mc2 * mset.beta
    if not fields.is_free:
        try:
            vp = complex(fields.v_plus(phi))
            vm = complex(fields.v_minus(phi))
            A = np.asarray(fields.vector_potential(phi), dtype=complex).reshape(3)
        except (TypeError, ValueError) as exc:
            raise DistortionError("field evaluator does not accept complex arguments") from exc
        M = M + phys.e * np.diag([vp, vp, vm, vm])
        M = M - phys.e * sum(A[j] * mset.alpha[j] for j in range(3))
    dJ = _jac_det_gradient(d.theta, g.radial, p.x)
    M = M - 0.5 * phys.c * sum((dJ[j] / J) * mset.alpha[j] for j in range(3))
    return M


def free_distorted_eigenvalues(d: DistortionParam, spec: ScalingSpec, p: SymbolPoint, phys: PhysicalConfig):
    """+-sqrt(zeta.zeta + m^2c^4) with the principal branch.

    The bilinear square zeta.zeta (no conjugation) is what the Clifford
    relations produce for complex zeta.
    """
    zeta = distorted_momentum(d, spec, p, phys)
    arg = complex(zeta @ zeta) + phys.mc2**2
    if abs(arg.imag) <= BRANCH_TOL * max(1.0, abs(arg)) and arg.real < 0:
        raise DistortionError("zeta^2 + m^2c^4 lies on the branch cut of the square root")
    root = principal_sqrt(arg)
    return root, -root
