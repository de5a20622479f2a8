"""Independent reference computations used by the test-suite.

Nothing here calls into the package's solvers; each oracle solves the same
problem through a different route (closed-form Bessel matching, brute-force
quadrature, direct matrix arithmetic).
"""
from __future__ import annotations

import cmath
import math

import numpy as np
from scipy.special import spherical_jn, spherical_yn


def _orders(kappa):
    return (kappa, kappa - 1) if kappa > 0 else (-kappa - 1, -kappa)


def _ratio(E, V, kappa, r, outgoing, m=1.0, c=1.0, h=1.0):
    """F/G of the regular (j) or outgoing (h1) solution of a constant potential."""
    l, lb = _orders(kappa)
    k = cmath.sqrt((E - V) ** 2 - m**2 * c**4) / (c * h)
    if outgoing:
        f = lambda n, x: spherical_jn(n, x) + 1j * spherical_yn(n, x)
    else:
        f = spherical_jn
    return math.copysign(1.0, kappa) * c * h * k / (E - V + m * c**2) * f(lb, k * r) / f(l, k * r)


def jost_determinant(E, V0, a, kappa, **kw):
    """Matching determinant of the square well; zeros are resonances and bound states."""
    return _ratio(E, V0, kappa, a, False, **kw) - _ratio(E, 0.0, kappa, a, True, **kw)


def jost_root(z0, V0, a, kappa, tol=1e-14, maxiter=100, **kw):
    """Complex Newton (secant-derivative) iteration on the matching determinant."""
    z = complex(z0)
    for _ in range(maxiter):
        f = jost_determinant(z, V0, a, kappa, **kw)
        dz = 1e-7 * max(1.0, abs(z))
        df = (jost_determinant(z + dz, V0, a, kappa, **kw) - jost_determinant(z - dz, V0, a, kappa, **kw)) / (2 * dz)
        step = f / df
        z -= step
        if abs(step) < tol * max(1.0, abs(z)):
            return z
    raise RuntimeError("Newton iteration did not converge")


def square_well_phase_mod_pi(E, V0, a, kappa, m=1.0, c=1.0, h=1.0):
    """Phase shift modulo pi (in (-pi/2, pi/2]) from closed-form matching at r = a.

    V0 is the potential energy inside the well.
    """
    l, lb = _orders(kappa)
    R = _ratio(E, V0, kappa, a, False, m, c, h)
    R = R.real
    k = math.sqrt(E * E - m**2 * c**4) / (c * h)
    s = math.copysign(1.0, kappa) * c * h * k / (E + m * c**2)
    UG, UF = spherical_jn(l, k * a), s * spherical_jn(lb, k * a)
    WG, WF = spherical_yn(l, k * a), s * spherical_yn(lb, k * a)
    d = math.atan((UF - R * UG) / (WF - R * WG))
    return d


def wrap_pi(x):
    """Reduce to (-pi/2, pi/2]."""
    return (x + 0.5 * math.pi) % math.pi - 0.5 * math.pi


def composite_gauss(f, edges, n=40):
    """Composite Gauss-Legendre rule over consecutive edges."""
    x, w = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        xm, xr = 0.5 * (a + b), 0.5 * (b - a)
        total += xr * float(np.sum(w * f(xm + xr * x)))
    return total
