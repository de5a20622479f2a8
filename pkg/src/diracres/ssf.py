"""Spectral shift function, Weyl term and Breit-Wigner tools.

Phase shifts come from a Pruefer-angle formulation of the radial system.
Writing G = rho cos(phi), F = rho sin(phi) turns it into a scalar equation

    phi' = kappa sin(2 phi)/r - [(E - mc^2 - V) cos^2 phi + (E + mc^2 - V) sin^2 phi]/(c h),

integrated once with the potential and once without.  The phase shift is
fixed modulo pi by matching (G, F) at r_match to the free regular and
irregular spinors, and its integer branch by the difference of the two
Pruefer angles.  This gives an absolute, continuous-in-energy phase shift
that vanishes identically for V = 0, so no unwrapping along the energy grid
is needed.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import spherical_jn, spherical_yn

from .dirac_core import FieldConfig, PhysicalConfig
from .radial import RadialChannel, RadialGrid, assemble_channel_operator, channel_list, interaction_radius
from .parallel import ordered_map

log = logging.getLogger(__name__)


class SSFError(ValueError):
    """Invalid input for phase-shift or spectral-shift computations."""


# ---------------------------------------------------------------------------
# Phase shifts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseShiftSample:
    kappa: int
    lam: float
    delta: float


def _orders(kappa: int) -> tuple[int, int]:
    """Spherical Bessel orders (l, lbar) of the upper and lower components."""
    return (kappa, kappa - 1) if kappa > 0 else (-kappa - 1, -kappa)


def free_spinors(kappa: int, E: float, r: float, phys: PhysicalConfig):
    """Regular (U) and irregular (W) free radial spinors (G, F) at radius r."""
    l, lb = _orders(kappa)
    chc = phys.c * phys.h
    k = math.sqrt(E * E - phys.mc2**2) / chc
    s = math.copysign(1.0, kappa) * chc * k / (E + phys.mc2)
    x = k * r
    U = (r * spherical_jn(l, x), s * r * spherical_jn(lb, x))
    W = (r * spherical_yn(l, x), s * r * spherical_yn(lb, x))
    return U, W, k


def _potential_energy(fields: FieldConfig, phys: PhysicalConfig):
    if fields.radial is None:
        return lambda r: 0.0
    prof = fields.radial
    return lambda r: float(phys.e * np.real(prof.value(r)))


def _pruefer(kappa, E, V, r0, r1, breaks, phys, rtol):
    chc = phys.c * phys.h
    mc2 = phys.mc2

    def rhs(r, y):
        v = V(r)
        c2 = math.cos(y[0]) ** 2
        return [kappa * math.sin(2 * y[0]) / r - ((E - mc2 - v) * c2 + (E + mc2 - v) * (1.0 - c2)) / chc]

    v0 = V(r0)
    if kappa < 0:
        phi = math.atan(-(E - mc2 - v0) * r0 / (chc * (2 * abs(kappa) + 1)))
    else:
        phi = 0.5 * math.pi - math.atan((E + mc2 - v0) * r0 / (chc * (2 * kappa + 1)))
    pts = [r0, *[b for b in sorted(breaks) if r0 < b < r1], r1]
    for a, b in zip(pts[:-1], pts[1:]):
        # one-sided evaluation inside each smooth piece
        eps = 1e-13 * (b - a)
        sol = integrate.solve_ivp(
            lambda r, y: rhs(min(max(r, a + eps), b - eps), y),
            (a, b),
            [phi],
            method="DOP853",
            rtol=rtol,
            atol=rtol,
        )
        if not sol.success:
            raise SSFError(f"Pruefer integration failed: {sol.message}")
        phi = float(sol.y[0, -1])
    return phi


def phase_shift(
    ch: RadialChannel,
    lam: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    r_match: Optional[float] = None,
    rtol: float = 1e-12,
) -> float:
    """Scattering phase shift delta_kappa(lam, h) for |lam| > mc^2.

    Parameters
    ----------
    ch : RadialChannel
    lam : float
        Energy in the continuous spectrum.
    fields : FieldConfig
        Spherically symmetric scalar field (or free).
    phys : PhysicalConfig
    r_match : float, optional
        Matching radius; defaults to the larger of the potential support and
        1.2 (l+1)/k.  Must lie outside the support.
    rtol : float
        Integrator tolerance.

    Returns
    -------
    float
        Absolute phase shift; attractive potentials give positive values at
        low kinetic energy.
    """
    kappa = ch.kappa
    if abs(lam) <= phys.mc2:
        raise SSFError("phase shifts are defined only for |lam| > mc^2")
    if fields.radial is None or fields.is_free:
        return 0.0
    V = _potential_energy(fields, phys)
    support = interaction_radius(fields, phys, rel_tol=1e-16)
    l, _ = _orders(kappa)
    k = math.sqrt(lam * lam - phys.mc2**2) / (phys.c * phys.h)
    R = max(support, 1.2 * (l + 1) / k) if r_match is None else float(r_match)
    if R < support:
        raise SSFError(f"r_match={R:.4g} lies inside the potential support {support:.4g}")
    vmax = abs(V(0.0)) + abs(V(0.5 * support))
    r0 = min(1e-3 * abs(kappa) * phys.c * phys.h / (abs(lam) + vmax + phys.mc2), 1e-3 * R)
    breaks = fields.radial.breakpoints
    phiV = _pruefer(kappa, lam, V, r0, R, breaks, phys, rtol)
    phi0 = _pruefer(kappa, lam, lambda r: 0.0, r0, R, (), phys, rtol)
    (UG, UF), (WG, WF), _ = free_spinors(kappa, lam, R, phys)
    G, F = math.cos(phiV), math.sin(phiV)
    delta_mod = math.atan2(G * UF - F * UG, G * WF - F * WG)
    delta_mod = (delta_mod + 0.5 * math.pi) % math.pi - 0.5 * math.pi
    guess = phi0 - phiV
    n = round((guess - delta_mod) / math.pi)
    return float(delta_mod + n * math.pi)


def phase_shifts(ch: RadialChannel, lambdas: Sequence[float], fields, phys, **kw) -> list[PhaseShiftSample]:
    """Phase shifts along an energy grid with a continuity check (< pi per step)."""
    out = [PhaseShiftSample(ch.kappa, float(l), phase_shift(ch, float(l), fields, phys, **kw)) for l in lambdas]
    for a, b in zip(out[:-1], out[1:]):
        if abs(b.delta - a.delta) >= math.pi and np.sign(a.lam) == np.sign(b.lam):
            warnings.warn(f"phase jump >= pi between lam={a.lam} and lam={b.lam}; refine the energy grid")
    return out


# ---------------------------------------------------------------------------
# Spectral shift function
# ---------------------------------------------------------------------------


@dataclass
class SSFCurve:
    lambdas: np.ndarray
    xi: np.ndarray
    xi_prime: np.ndarray
    h: float
    kappa_max: int
    tail_estimate: np.ndarray
    gap_eigenvalues: list = field(default_factory=list)
    mollifier_width: float = 3.0


def mollify(values: np.ndarray, width: float) -> np.ndarray:
    """Convolve with a normalized bump of half-width ``width/2`` grid steps (edges renormalized)."""
    values = np.asarray(values, dtype=float)
    if width <= 1.0:
        return values.copy()
    half = 0.5 * width
    m = int(math.ceil(half))
    s = np.arange(-m, m + 1) / half
    ker = np.where(np.abs(s) < 1, np.exp(1.0 - 1.0 / np.clip(1.0 - s**2, 1e-300, None)), 0.0)
    n = values.size
    # "same" mode returns the kernel length when the kernel is the longer input
    num = np.convolve(values, ker)[m : m + n]
    den = np.convolve(np.ones_like(values), ker)[m : m + n]
    return num / den


def _derivative(lambdas, xi, width):
    sm = mollify(xi, width)
    return np.gradient(sm, lambdas)


def gap_eigenvalues(
    fields: FieldConfig,
    phys: PhysicalConfig,
    kappas: Iterable[int],
    grid: Optional[RadialGrid] = None,
) -> list[tuple[float, int]]:
    """Real eigenvalues in (-mc^2, mc^2) from the theta=0 radial operators, as (value, kappa)."""
    if fields.radial is None:
        return []
    if grid is None:
        R = max(interaction_radius(fields, phys), 1.0)
        grid = RadialGrid(r_max=max(12.0 * R, 40.0 * phys.h), N=max(256, int(96 * R / phys.h)), degree=8)
    out = []
    for kappa in kappas:
        op = assemble_channel_operator(RadialChannel(kappa), None, grid, fields, phys)
        from scipy.linalg import eigvalsh

        vals = eigvalsh(np.real(op.dense()))
        for v in vals[(vals > -phys.mc2) & (vals < phys.mc2)]:
            out.append((float(v), int(kappa)))
    return sorted(out)


def _kappas(kappa_max: int) -> list[int]:
    out = []
    for k in range(1, kappa_max + 1):
        out += [-k, k]
    return out


def ssf_curve(
    lambdas: Sequence[float],
    h: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    kappa_max: Optional[int] = None,
    mollifier_width: float = 3.0,
    radial_grid: Optional[RadialGrid] = None,
    tail_warn: float = 0.01,
    workers: int = 1,
) -> SSFCurve:
    """xi(lam, h) on an energy grid.

    On the continuous spectrum xi = (1/pi) sum_kappa 2|kappa| delta_kappa.
    In the gap xi equals its value just below -mc^2 plus the number of gap
    eigenvalues (counted with degeneracy 2|kappa|) not exceeding lam.

    Parameters
    ----------
    kappa_max : int, optional
        Channel truncation; defaults to the classical access bound of
        ``channel_list`` over each side of the grid and over its gap part.
    mollifier_width : float
        Width (in grid steps) of the bump used before differentiating.
    workers : int
        Threads for the channel loop; results do not depend on it.
    """
    phys = phys.with_h(h)
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size < 2 or np.any(np.diff(lam) <= 0):
        raise SSFError("lambdas must be a strictly increasing 1D grid")
    mc2 = phys.mc2
    if np.any(np.isclose(np.abs(lam), mc2, rtol=0, atol=1e-12)):
        raise SSFError("lambda grid must avoid the thresholds +-mc^2")
    free = fields.radial is None or fields.is_free
    if free:
        z = np.zeros_like(lam)
        return SSFCurve(lam, z, z.copy(), h, kappa_max or 0, z.copy(), [], mollifier_width)
    cont = np.abs(lam) > mc2
    if kappa_max is None:
        kappa_max = 1
        for side in (lam[lam > mc2], lam[lam < -mc2], lam[~cont]):
            if side.size:
                lo, hi = float(side.min()), float(side.max())
                hi = max(hi, lo + 1e-9 * max(1.0, abs(lo)))
                chs = channel_list(h, (lo, hi), fields, phys)
                kappa_max = max(kappa_max, max((abs(c.kappa) for c in chs), default=1))
    kap = _kappas(kappa_max)
    xi = np.zeros_like(lam)
    contrib = np.zeros((kappa_max, lam.size))
    idx = np.nonzero(cont)[0]

    def channel(k):
        ch = RadialChannel(k)
        return [phase_shift(ch, float(lam[i]), fields, phys) for i in idx]

    for k, deltas in zip(kap, ordered_map(channel, kap, workers)):
        contrib[abs(k) - 1, idx] += 2 * abs(k) * np.asarray(deltas, dtype=float) / math.pi
    xi[cont] = contrib[:, cont].sum(axis=0)
    # truncation tail from a geometric model of the last two channel shells
    tail = np.zeros_like(lam)
    if kappa_max >= 2:
        a, b = np.abs(contrib[-2]), np.abs(contrib[-1])
        q = np.divide(b, a, out=np.ones_like(b), where=a > 0)
        tail = np.where(q < 1, b * q / (1 - np.minimum(q, 1 - 1e-12)), np.inf)
        tail = np.where(b == 0, 0.0, tail)
    scale = np.maximum(np.abs(xi), 1e-300)
    if np.any(cont & (tail > tail_warn * scale) & (np.abs(xi) > 1e-12)):
        warnings.warn(f"kappa_max={kappa_max} may be too small: truncation tail exceeds {tail_warn:.0%} of xi")
    gaps: list = []
    gap_pts = np.nonzero(~cont)[0]
    if gap_pts.size:
        gaps = gap_eigenvalues(fields, phys, kap, radial_grid)
        below = lam < -mc2
        if np.any(below):
            base = xi[np.nonzero(below)[0][-1]]
        else:
            lo = -mc2 - 1e-6 * max(1.0, mc2)
            base = sum(2 * abs(k) * phase_shift(RadialChannel(k), lo, fields, phys) / math.pi for k in kap)
        for i in gap_pts:
            xi[i] = base + sum(2 * abs(k) for v, k in gaps if v <= lam[i])
    return SSFCurve(lam, xi, _derivative(lam, xi, mollifier_width), h, kappa_max, tail, gaps, mollifier_width)


# ---------------------------------------------------------------------------
# Weyl term
# ---------------------------------------------------------------------------


def w_pm(lam, a, b, phys: PhysicalConfig):
    """(W_+, W_-) = (((lam - e(a+b)/2)_+-)^2 - (mc^2 + e(a-b)/2)^2)_+^{3/2}."""
    lam = np.asarray(lam, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = lam - 0.5 * phys.e * (a + b)
    p4 = phys.mc2 + 0.5 * phys.e * (a - b)
    up = np.maximum(s, 0.0) ** 2 - p4**2
    dn = np.maximum(-s, 0.0) ** 2 - p4**2
    return np.maximum(up, 0.0) ** 1.5, np.maximum(dn, 0.0) ** 1.5


@dataclass(frozen=True)
class WeylTerm:
    lam: float
    lam1: float
    value: float
    w_lam: float
    w_lam1: float
    error_estimate: float


def _weyl_integrand(lam, vp, vm, phys, vp2=None, vm2=None):
    Wp, Wm = w_pm(lam, vp, vm, phys)
    if vp2 is None:
        Wp0, Wm0 = w_pm(lam, 0.0, 0.0, phys)
    else:
        Wp0, Wm0 = w_pm(lam, vp2, vm2, phys)
    return (Wp - Wp0) - (Wm - Wm0)


def _turning_radii(lam, prof, e, phys, r_hi):
    """Radii where (lam - e v)^2 = m^2c^4, i.e. kinks of the integrand."""
    r = np.linspace(0.0, r_hi, 4001)
    s = lam - e * np.real(prof.value(r))
    f = np.abs(s) - phys.mc2
    pts = []
    for i in np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]:
        g = lambda x: abs(lam - e * float(np.real(prof.value(x)))) - phys.mc2
        pts.append(optimize.brentq(g, r[i], r[i + 1], xtol=1e-14))
    return pts


def weyl_density(
    lam: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    pair: Optional[FieldConfig] = None,
    epsabs: float = 0.0,
    epsrel: float = 1e-12,
) -> tuple[float, float]:
    """w(lam) = (1/(3 pi^2 c^3)) int [W_+(V) - W_+(0) - W_-(V) + W_-(0)] dx and an error estimate.

    With ``pair`` the reference term uses the second field configuration
    instead of the free one.
    """
    pref = 1.0 / (3.0 * math.pi**2 * phys.c**3)
    if fields.is_free and (pair is None or pair.is_free):
        return 0.0, 0.0
    sph = fields.radial is not None and (pair is None or pair.is_free or pair.radial is not None)
    if sph:
        prof = fields.radial
        prof2 = None if (pair is None or pair.is_free) else pair.radial
        R = max(interaction_radius(fields, phys, 1e-17), interaction_radius(pair, phys, 1e-17) if prof2 else 0.0)
        decay = min(prof.decay, prof2.decay if prof2 else math.inf)
        if decay <= 3.0:
            warnings.warn("integrand decays slower than r^-4; the Weyl integral may diverge (delta > 3 fails)")

        def f(r):
            v = float(np.real(prof.value(r)))
            if prof2 is None:
                return r * r * float(_weyl_integrand(lam, v, v, phys))
            v2 = float(np.real(prof2.value(r)))
            return r * r * float(_weyl_integrand(lam, v, v, phys, v2, v2))

        R = R if math.isfinite(R) and R > 0 else 50.0
        pts = sorted(
            set(_turning_radii(lam, prof, phys.e, phys, R) + list(prof.breakpoints) + (list(prof2.breakpoints) if prof2 else []))
        )
        pts = [p for p in pts if 0 < p < R]
        val, err = integrate.quad(f, 0.0, R, points=pts or None, limit=500, epsabs=epsabs, epsrel=epsrel)
        if not math.isfinite(prof.support) or prof.decay < math.inf:
            tail, terr = integrate.quad(f, R, math.inf, limit=200, epsabs=epsabs, epsrel=epsrel)
            val, err = val + tail, err + terr
        return pref * 4.0 * math.pi * val, pref * 4.0 * math.pi * err
    return _weyl_density_3d(lam, fields, phys, pair, pref)


def _weyl_density_3d(lam, fields, phys, pair, pref, n_r=200, n_t=48, n_p=48, r_max=None):
    """Tensor Gauss quadrature in spherical coordinates for general fields."""
    r_max = r_max or 20.0
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * r_max * (xr + 1)
    wr = 0.5 * r_max * wr
    xt, wt = np.polynomial.legendre.leggauss(n_t)
    ph = 2 * math.pi * (np.arange(n_p) + 0.5) / n_p
    st = np.sqrt(1 - xt**2)
    dirs = np.stack(
        [st[:, None] * np.cos(ph)[None, :], st[:, None] * np.sin(ph)[None, :], np.broadcast_to(xt[:, None], (n_t, n_p))],
        axis=-1,
    )
    pts = r[:, None, None, None] * dirs[None]
    vp = np.real(fields.v_plus(pts))
    vm = np.real(fields.v_minus(pts))
    if pair is None or pair.is_free:
        integ = _weyl_integrand(lam, vp, vm, phys)
    else:
        integ = _weyl_integrand(lam, vp, vm, phys, np.real(pair.v_plus(pts)), np.real(pair.v_minus(pts)))
    w = (wr * r * r)[:, None, None] * wt[None, :, None] * (2 * math.pi / n_p)
    val = float(np.sum(integ * w))
    return pref * val, math.nan


def weyl_term(
    lam: float,
    lam1: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    pair: Optional[FieldConfig] = None,
    **kw,
) -> WeylTerm:
    """w(lam, lam1) = w(lam) - w(lam1); both energies on the same side of the thresholds."""
    lo, hi = sorted((lam, lam1))
    for t in (phys.mc2, -phys.mc2):
        if lo < t < hi:
            raise SSFError("+-mc^2 must not lie between lam1 and lam")
    a, ea = weyl_density(lam, fields, phys, pair, **kw)
    if lam1 == lam:
        return WeylTerm(lam, lam1, 0.0, a, a, 0.0)
    b, eb = weyl_density(lam1, fields, phys, pair, **kw)
    return WeylTerm(lam, lam1, a - b, a, b, ea + eb)


# ---------------------------------------------------------------------------
# Breit-Wigner tools
# ---------------------------------------------------------------------------


def _z_and_deg(res):
    for r in res:
        if hasattr(r, "z"):
            yield complex(r.z), int(getattr(r, "degeneracy", 1))
        else:
            yield complex(r), 1


def breit_wigner_density(res, lam):
    """sum_w deg (-Im w) / (pi |lam - w|^2); real points are skipped."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam)
    for z, deg in _z_and_deg(res):
        if z.imag == 0.0:
            continue
        out = out + deg * (-z.imag) / (math.pi * np.abs(lam - z) ** 2)
    return out if out.ndim else float(out)


def harmonic_measure(w: complex, a: float, b: float) -> float:
    """Poisson measure of [a, b] seen from w in the lower half-plane."""
    w = complex(w)
    if w.imag >= 0:
        raise SSFError("harmonic measure of the lower half-plane needs Im w < 0")
    g = -w.imag
    return float((math.atan((b - w.real) / g) - math.atan((a - w.real) / g)) / math.pi)


@dataclass(frozen=True)
class LorentzianFit:
    re_w: float
    im_w: float
    background: tuple
    residual_norm: float
    ill_conditioned: bool


def lorentzian_fit(lams, values, degeneracy: int = 1, poly_order: int = 1, guess: Optional[complex] = None) -> LorentzianFit:
    """Least-squares fit of deg (-Im w)/(pi |lam - w|^2) + polynomial background.

    Parameters
    ----------
    lams, values : array_like
        Samples of xi'.  At least 20 samples spanning six half-widths of the
        peak are required.
    degeneracy : int
        Weight of the Lorentzian.
    poly_order : int
        Order of the background polynomial (centered on the sample window).
    guess : complex, optional
        Starting pole; defaults to the peak location and its half-maximum width.
    """
    x = np.asarray(lams, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size < 20:
        raise SSFError("lorentzian_fit needs at least 20 samples")
    xc = 0.5 * (x[0] + x[-1])
    xs = 0.5 * (x[-1] - x[0])
    if guess is None:
        i = int(np.argmax(y))
        above = np.nonzero(y >= 0.5 * (y[i] + np.median(y)))[0]
        g0 = max(0.5 * (x[above[-1]] - x[above[0]]), 2 * np.min(np.diff(x)))
        guess = complex(x[i], -g0)
    g_init = -guess.imag
    if (x[-1] - x[0]) < 6 * g_init:
        raise SSFError("samples must span at least six half-widths of the peak")

    def model(p):
        re, lg = p[0], p[1]
        g = math.exp(lg)
        poly = np.polyval(p[2:][::-1], (x - xc) / xs) if poly_order >= 0 else 0.0
        return degeneracy * g / (math.pi * ((x - re) ** 2 + g * g)) + poly

    p0 = np.concatenate([[guess.real, math.log(g_init)], np.zeros(poly_order + 1)])
    fit = optimize.least_squares(lambda p: model(p) - y, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    J = fit.jac
    cond = float(np.linalg.cond(J)) if J.size else math.inf
    g = math.exp(fit.x[1])
    ill = (not fit.success) or cond > 1e12 or not (x[0] < fit.x[0] < x[-1])
    # convert background coefficients from the scaled variable to powers of (lam - xc)
    bg = tuple(float(c / xs**k) for k, c in enumerate(fit.x[2:]))
    return LorentzianFit(float(fit.x[0]), -g, bg, float(np.linalg.norm(fit.fun)), bool(ill))


def representation_residual(curve: SSFCurve, res, window: tuple[float, float]) -> dict:
    """xi'(lam) minus the Breit-Wigner sum on a window of the curve's grid."""
    lo, hi = window
    for v, _ in curve.gap_eigenvalues:
        if lo <= v <= hi:
            raise SSFError("window must avoid real eigenvalues")
    sel = (curve.lambdas >= lo) & (curve.lambdas <= hi)
    lam = curve.lambdas[sel]
    bw = np.asarray(breit_wigner_density(list(res), lam), dtype=float)
    rem = curve.xi_prime[sel] - bw
    d2 = np.abs(np.diff(rem, 2)) / np.diff(lam)[:-1] ** 2 if lam.size > 2 else np.zeros(0)
    return {
        "lambdas": lam,
        "xi_prime": curve.xi_prime[sel],
        "bw_sum": bw,
        "remainder": rem,
        "max_abs": float(np.max(np.abs(rem))) if rem.size else 0.0,
        "smoothness": float(d2.max()) if d2.size else 0.0,
    }
