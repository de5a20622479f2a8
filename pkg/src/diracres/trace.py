"""Weak trace asymptotics: smoothing kernel, gamma_0, traces, noncritical levels.

The leading weak asymptotics read

    tr(phi(H_1) - phi(H_0)) ~ h^-3 gamma_0(phi),
    gamma_0(phi) = (2 pi)^-3 int int tr(phi(D_1) - phi(D_0)) dx dxi.

For each x the momentum integral of a branch +-sqrt(|p|^2 + p4^2) + s is
one-dimensional after the change of variables E = sqrt(|p|^2 + p4^2), which is
how gamma_0 is evaluated here.  The numerical side uses the theta=0 radial
operators, summed over channels with their degeneracy.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy import integrate

from .dirac_core import FieldConfig, PhysicalConfig
from .radial import RadialChannel, RadialGrid, assemble_channel_operator, channel_list, interaction_radius

log = logging.getLogger(__name__)


class TraceError(ValueError):
    """Invalid input to the trace computations."""


# ---------------------------------------------------------------------------
# Smoothing kernel
# ---------------------------------------------------------------------------


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class SmoothingSpec:
    """Even, compactly supported time cutoff theta(t) with theta(0) = 1.

    ``profile`` is ``"bump"`` (the scaled bump itself) or ``"bump-conv"``
    (a bump convolved with itself, whose Fourier transform is a square).  The
    plain bump is checked for a nonnegative transform and replaced by the
    convolved profile when the check fails; ``resolved_profile`` tells which
    one is in use.
    """

    theta_window: float
    profile: str = "bump"
    n_quad: int = 400

    def __post_init__(self) -> None:
        if self.theta_window <= 0:
            raise TraceError("theta_window must be positive")
        if self.profile not in ("bump", "bump-conv"):
            raise TraceError(f"unknown profile {self.profile!r}")

    @cached_property
    def _nodes(self):
        x, w = np.polynomial.legendre.leggauss(self.n_quad)
        return x, w

    def _ft_bump(self, lam, half_width):
        # int b(t/half_width) e^{-i t lam} dt, b even
        x, w = self._nodes
        t = half_width * x
        lam = np.asarray(lam, dtype=float)
        vals = (w * _bump(x))[None, :] * np.cos(np.outer(lam.ravel(), t))
        out = half_width * vals.sum(axis=1)
        # the rule aliases once lam * half_width nears 2 n_quad; the true transform is below 1e-12 there
        out[np.abs(lam.ravel()) * half_width > 1.5 * self.n_quad] = 0.0
        return out.reshape(lam.shape)

    @cached_property
    def _conv_norm(self) -> float:
        # (b*b)(0) for the half-width bump: int b(t)^2 dt
        x, w = self._nodes
        a = 0.5 * self.theta_window
        return float(a * np.sum(w * _bump(x) ** 2))

    @cached_property
    def resolved_profile(self) -> str:
        if self.profile == "bump-conv":
            return "bump-conv"
        lam = np.linspace(0.0, 200.0 / self.theta_window, 4001)
        if np.all(self._ft_bump(lam, self.theta_window) >= -1e-14):
            return "bump"
        log.info("bump transform changes sign; using the self-convolved bump")
        return "bump-conv"

    def theta(self, t):
        """theta(t), even with theta(0) = 1 and support [-theta_window, theta_window]."""
        t = np.asarray(t, dtype=float)
        d = self.theta_window
        if self.resolved_profile == "bump":
            return _bump(t / d)
        a = 0.5 * d
        x, w = self._nodes
        flat = t.ravel()
        out = np.empty_like(flat)
        for i, ti in enumerate(flat):
            lo, hi = max(-a, ti - a), min(a, ti + a)
            if hi <= lo:
                out[i] = 0.0
                continue
            s = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x
            out[i] = 0.5 * (hi - lo) * np.sum(w * _bump(s / a) * _bump((ti - s) / a))
        return (out / self._conv_norm).reshape(t.shape)

    def theta_hat(self, lam):
        """Fourier transform int theta(t) e^{-i t lam} dt (real and even)."""
        if self.resolved_profile == "bump":
            return self._ft_bump(lam, self.theta_window)
        return self._ft_bump(lam, 0.5 * self.theta_window) ** 2 / self._conv_norm


def smoothing_kernel(spec: SmoothingSpec, h: float, lam):
    """(2 pi h)^-1 theta_hat(-lam/h); a probability density in lam."""
    return spec.theta_hat(-np.asarray(lam, dtype=float) / h) / (2.0 * math.pi * h)


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported phi with support [a, b] avoiding +-mc^2."""

    __test__ = False  # not a pytest class

    evaluator: Callable
    a: float
    b: float
    derivative: Optional[Callable] = None
    label: str = ""

    def check(self, phys: PhysicalConfig) -> None:
        if not self.b > self.a:
            raise TraceError("empty support")
        for t in (phys.mc2, -phys.mc2):
            if self.a <= t <= self.b:
                raise TraceError("test function support must avoid +-mc^2")

    def __call__(self, lam):
        return self.evaluator(np.asarray(lam, dtype=float))


def bump_function(a: float, b: float, height: float = 1.0) -> TestFunction:
    """height * exp(1 - 1/(1-s^2)) on (a, b), s the affine map to (-1, 1)."""
    c, r = 0.5 * (a + b), 0.5 * (b - a)

    def f(x):
        return height * _bump((x - c) / r)

    def df(x):
        s = (np.asarray(x, dtype=float) - c) / r
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        si = s[inside]
        out[inside] = -2 * si / (1 - si**2) ** 2 * np.exp(1 - 1 / (1 - si**2)) / r
        return height * out

    return TestFunction(f, a, b, df, f"bump({a},{b})")


def smooth_plateau(a: float, b: float, ramp: float) -> TestFunction:
    """Equal to 1 on [a + ramp, b - ramp] with smooth ramps, support [a, b]."""
    if 2 * ramp >= b - a:
        raise TraceError("ramps overlap")

    def step(s):
        # smooth transition from 0 (s<=0) to 1 (s>=1)
        s = np.clip(s, 0.0, 1.0)
        f0 = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        f1 = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
        return f0 / (f0 + f1)

    def dstep(s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0) & (s < 1)
        si = np.where(inside, s, 0.5)
        f0, f1 = np.exp(-1.0 / si), np.exp(-1.0 / (1.0 - si))
        d = (f0 * f1 / si**2 + f0 * f1 / (1.0 - si) ** 2) / (f0 + f1) ** 2
        return np.where(inside, d, 0.0)

    def f(x):
        x = np.asarray(x, dtype=float)
        return step((x - a) / ramp) * step((b - x) / ramp)

    def df(x):
        x = np.asarray(x, dtype=float)
        u, v = (x - a) / ramp, (b - x) / ramp
        return (dstep(u) * step(v) - step(u) * dstep(v)) / ramp

    return TestFunction(f, a, b, df, f"plateau({a},{b},{ramp})")


# ---------------------------------------------------------------------------
# gamma_0
# ---------------------------------------------------------------------------


def _branch_momentum_integral(phi: TestFunction, p4: float, s: float, c: float, sign: int, n: int = 0) -> float:
    """int_{R^3} phi(sign sqrt(|p/..|) ...) as 4 pi int_{p4}^inf E sqrt(E^2-p4^2)/c^3 phi(sign E + s) dE."""
    p4 = abs(p4)
    # phi(sign*E + s) is nonzero only for sign*E + s in (a, b)
    if sign > 0:
        lo, hi = phi.a - s, phi.b - s
    else:
        lo, hi = s - phi.b, s - phi.a
    lo = max(lo, p4)
    if hi <= lo:
        return 0.0
    g = lambda E: E * math.sqrt(max(E * E - p4 * p4, 0.0)) * float(phi(sign * E + s))
    if n:
        x, w = np.polynomial.legendre.leggauss(n)
        E = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x
        vals = E * np.sqrt(np.maximum(E * E - p4 * p4, 0.0)) * phi(sign * E + s)
        return 4 * math.pi * 0.5 * (hi - lo) * float(np.sum(w * vals)) / c**3
    val, _ = integrate.quad(g, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
    return 4 * math.pi * val / c**3


def _radial_integrand(r, phi, prof, phys):
    v = float(np.real(prof.value(r)))
    s = phys.e * v
    mc2, c = phys.mc2, phys.c
    tot = 0.0
    for sign in (1, -1):
        tot += _branch_momentum_integral(phi, mc2, s, c, sign) - _branch_momentum_integral(phi, mc2, 0.0, c, sign)
    return r * r * tot


def gamma0(phi: TestFunction, fields: FieldConfig, phys: PhysicalConfig, r_max: Optional[float] = None, epsrel: float = 1e-10) -> float:
    """gamma_0(phi) = (2 pi)^-3 int int 2 sum_pm [phi(H_1^pm) - phi(H_0^pm)] dx dxi.

    Spherical fields use a nested adaptive (r, E) quadrature; general fields a
    tensor rule over x with the same one-dimensional momentum integral.
    """
    phi.check(phys)
    if fields.is_free:
        return 0.0
    pref = 2.0 / (2.0 * math.pi) ** 3
    if fields.radial is not None and fields.A is None:
        prof = fields.radial
        R = r_max or interaction_radius(fields, phys, 1e-16)
        pts = [p for p in prof.breakpoints if 0 < p < R]
        val, err = integrate.quad(
            _radial_integrand, 0.0, R, args=(phi, prof, phys), points=pts or None, epsabs=0.0, epsrel=epsrel, limit=400
        )
        if err > 1e-6 * max(abs(val), 1e-300):
            warnings.warn(f"gamma0 quadrature error estimate {err:.2e} relative to {abs(val):.2e}")
        return pref * 4.0 * math.pi * val
    return pref * _gamma0_3d(phi, fields, phys, r_max or 20.0)


def _gamma0_3d(phi, fields, phys, r_max, n_r=120, n_t=24, n_p=24, n_e=64):
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * r_max * (xr + 1)
    wr = 0.5 * r_max * wr
    xt, wt = np.polynomial.legendre.leggauss(n_t)
    ph = 2 * math.pi * (np.arange(n_p) + 0.5) / n_p
    st = np.sqrt(1 - xt**2)
    total = 0.0
    free = sum(_branch_momentum_integral(phi, phys.mc2, 0.0, phys.c, sg, n_e) for sg in (1, -1))
    for i, ri in enumerate(r):
        for j, ct in enumerate(xt):
            for pk in ph:
                x = ri * np.array([st[j] * math.cos(pk), st[j] * math.sin(pk), ct])
                vp = float(np.real(fields.v_plus(x)))
                vm = float(np.real(fields.v_minus(x)))
                p4 = phys.mc2 + 0.5 * phys.e * (vp - vm)
                s = 0.5 * phys.e * (vp + vm)
                val = sum(_branch_momentum_integral(phi, p4, s, phys.c, sg, n_e) for sg in (1, -1)) - free
                total += wr[i] * ri * ri * wt[j] * (2 * math.pi / n_p) * val
    return total


def gamma0_from_weyl(phi: TestFunction, fields: FieldConfig, phys: PhysicalConfig, n: int = 400) -> float:
    """Independent route: gamma_0(phi) = -int phi'(lam) w(lam) dlam with w the Weyl density.

    Valid when supp phi lies in one connected piece of the continuum or the gap
    where w is smooth.
    """
    from .ssf import weyl_density

    if phi.derivative is None:
        raise TraceError("test function needs a derivative for this route")
    x, w = np.polynomial.legendre.leggauss(n)
    lam = 0.5 * (phi.a + phi.b) + 0.5 * (phi.b - phi.a) * x
    vals = np.array([weyl_density(float(l), fields, phys)[0] for l in lam])
    return float(-0.5 * (phi.b - phi.a) * np.sum(w * phi.derivative(lam) * vals))


# ---------------------------------------------------------------------------
# Numerical traces
# ---------------------------------------------------------------------------


@dataclass
class TraceResult:
    value: float
    h: float
    kappa_max: int
    bias_estimate: float
    per_channel: dict = field(default_factory=dict)


def default_trace_grid(phi: TestFunction, fields: FieldConfig, phys: PhysicalConfig, degree: int = 8, r_factor: float = 3.0) -> RadialGrid:
    """Grid resolving the largest local momentum reachable in supp phi."""
    R = max(interaction_radius(fields, phys), 1.0)
    r_max = r_factor * R + 10.0 * phys.h
    vmax = 0.0
    if fields.radial is not None:
        rr = np.linspace(0, R, 2001)
        vmax = float(np.abs(phys.e * np.real(fields.radial.value(rr))).max())
    E = max(abs(phi.a), abs(phi.b)) + vmax
    pmax = math.sqrt(max(E * E - phys.mc2**2, 1e-12)) / phys.c
    N = max(128, int(math.ceil(2.5 * r_max * pmax / phys.h)))
    return RadialGrid(r_max=r_max, N=N, degree=degree)


def _channel_trace(kappa, phi, fields, phys, grid):
    ch = RadialChannel(kappa)
    op1 = assemble_channel_operator(ch, None, grid, fields, phys)
    ev1 = sla.eigvalsh(np.real(op1.dense()))
    s = float(np.sum(phi(ev1)))
    if not fields.is_free:
        op0 = assemble_channel_operator(ch, None, grid, FieldConfig(), phys)
        ev0 = sla.eigvalsh(np.real(op0.dense()))
        s -= float(np.sum(phi(ev0)))
    return s


def numerical_trace_difference(
    phi: TestFunction,
    h: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    kappa_max: Optional[int] = None,
    grid: Optional[RadialGrid] = None,
    estimate_bias: bool = False,
    workers: int = 1,
) -> TraceResult:
    """sum_kappa 2|kappa| sum_i [phi(lam_i(H_1)) - phi(lam_i(H_0))] at theta = 0.

    With ``estimate_bias`` the computation is repeated with r_max doubled and
    the difference reported as the continuum discretization bias.
    """
    phys = phys.with_h(h)
    phi.check(phys)
    if fields.is_free:
        return TraceResult(0.0, h, kappa_max or 0, 0.0, {})
    if kappa_max is None:
        chans = channel_list(h, (phi.a, phi.b), fields, phys)
        kappa_max = max((abs(c.kappa) for c in chans), default=0)
    grid = grid or default_trace_grid(phi, fields, phys)
    kappas = [k for m in range(1, kappa_max + 1) for k in (-m, m)]
    from .parallel import ordered_map

    vals = ordered_map(lambda k: _channel_trace(k, phi, fields, phys, grid), kappas, workers)
    per = {k: 2 * abs(k) * v for k, v in zip(kappas, vals)}
    total = float(sum(per[k] for k in kappas))
    bias = 0.0
    if estimate_bias:
        g2 = RadialGrid(r_max=2 * grid.r_max, N=2 * grid.N, degree=grid.degree, breakpoints=grid.breakpoints)
        vals2 = ordered_map(lambda k: _channel_trace(k, phi, fields, phys, g2), kappas, workers)
        bias = abs(float(sum(2 * abs(k) * v for k, v in zip(kappas, vals2))) - total)
    return TraceResult(total, h, kappa_max, bias, per)


def local_trace_residual(
    f: Callable,
    psi: TestFunction,
    omega,
    res,
    h: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    kappa_max: Optional[int] = None,
    grid: Optional[RadialGrid] = None,
    boundary_margin: float = 1e-3,
) -> dict:
    """|tr((psi f)(H_1) - (psi f)(H_0)) - sum_{z in Res cap Omega} deg f(z)|.

    ``omega`` is a RegionQuery; resonances within ``boundary_margin`` of its
    boundary are flagged because the formula is sensitive to them.
    """
    def g(lam):
        lam = np.asarray(lam, dtype=float)
        return np.real(psi(lam) * f(lam))

    tf = TestFunction(g, psi.a, psi.b, None, "psi*f")
    tr = numerical_trace_difference(tf, h, fields, phys, kappa_max, grid)
    inside, flagged = 0.0 + 0.0j, []
    pad = 1e-12 * max(1.0, omega.diameter)
    for r in res:
        if omega.contains(r.z, pad):
            inside += r.degeneracy * complex(f(r.z))
            dist = min(
                abs(r.z.real - omega.re_min), abs(r.z.real - omega.re_max), abs(r.z.imag - omega.im_min), abs(r.z.imag - omega.im_max)
            )
            if omega.im_min != omega.im_max and dist < boundary_margin:
                flagged.append(r.z)
            if omega.im_min == omega.im_max and min(abs(r.z.real - omega.re_min), abs(r.z.real - omega.re_max)) < boundary_margin:
                flagged.append(r.z)
    lam = np.linspace(psi.a, psi.b, 201)
    sup_f = float(np.max(np.abs(f(lam))))
    return {
        "trace": tr.value,
        "resonance_sum": inside,
        "residual": float(abs(tr.value - inside)),
        "scale_proxy": h**-3 * sup_f,
        "boundary_flags": flagged,
    }


# ---------------------------------------------------------------------------
# Noncritical levels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoncriticalReport:
    noncritical: bool
    margin: float
    note: str = ""

    def __bool__(self) -> bool:
        return self.noncritical


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (3 - math.sqrt(5)) * i
    rr = np.sqrt(1 - z * z)
    return np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)


def noncritical_check(
    lam: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    n_dir: int = 32,
    n_rad: int = 64,
    floor: float = 1e-3,
    r_max: Optional[float] = None,
) -> NoncriticalReport:
    """Smallest |grad_{x,xi} H_1^pm| on sampled points of the shells {H_1^pm = lam}.

    For each sampled x and momentum direction the shell radius is explicit:
    |c xi - eA| = sqrt((lam - s)^2 - p4^2).  Field derivatives use centered
    differences.
    """
    R = r_max or max(1.5 * interaction_radius(fields, phys), 1.0)
    dirs = _fibonacci_sphere(n_dir)
    radii = np.linspace(0.0, R, n_rad)
    X = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    eps = 1e-6 * max(1.0, R)
    e, c = phys.e, phys.c

    def scal(x):
        vp = np.real(fields.v_plus(x))
        vm = np.real(fields.v_minus(x))
        return 0.5 * e * (vp + vm), phys.mc2 + 0.5 * e * (vp - vm)

    s, p4 = scal(X)
    ds = np.zeros_like(X)
    dp4 = np.zeros_like(X)
    dA = np.zeros((X.shape[0], 3, 3))
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = eps
        sp_, pp = scal(X + dx)
        sm, pm = scal(X - dx)
        ds[:, j] = (sp_ - sm) / (2 * eps)
        dp4[:, j] = (pp - pm) / (2 * eps)
        if fields.A is not None:
            dA[:, :, j] = (np.real(fields.vector_potential(X + dx)) - np.real(fields.vector_potential(X - dx))) / (2 * eps)
    best = math.inf
    hit = False
    for sign in (1, -1):
        q = (lam - s) ** 2 - p4**2
        # the branch sign must match the side of lam - s
        ok = (q >= 0) & (sign * (lam - s) > 0)
        if not np.any(ok):
            continue
        hit = True
        pmag = np.sqrt(np.maximum(q[ok], 0.0))
        root = np.abs(lam - s[ok])
        for d in dirs:
            p = pmag[:, None] * d[None, :]
            grad_xi = sign * c * p / root[:, None]
            # d/dx of sign*sqrt(|p|^2+p4^2) with p = c xi - eA: -e (dA)^T p, plus p4 grad p4
            gA = -e * np.einsum("nij,ni->nj", dA[ok], p)
            grad_x = sign * (gA + p4[ok][:, None] * dp4[ok]) / root[:, None] + ds[ok]
            g = np.sqrt(np.sum(grad_xi**2, axis=1) + np.sum(grad_x**2, axis=1))
            best = min(best, float(g.min()))
    if not hit:
        return NoncriticalReport(True, math.inf, "empty energy shell")
    return NoncriticalReport(bool(best > floor), best, "")
