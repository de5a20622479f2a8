"""Partial-wave radial Dirac operators with exterior complex scaling or a CAP.

For a spherically symmetric scalar potential the Dirac operator splits into
2x2 radial blocks

    h_kappa = [[mc^2 + ev,        ch(-d/dr + kappa/r)],
               [ch(d/dr + kappa/r), -mc^2 + ev       ]]

acting on (G, F), each with degeneracy 2|kappa|.

Discretization
--------------
A staggered spectral-element Galerkin scheme.  The component that vanishes
faster at the origin (G for kappa>0, F for kappa<0) lives in continuous
piecewise polynomials of degree p vanishing at r=0; the other one lives in
discontinuous piecewise polynomials of degree p-1 and vanishes weakly at
r_max.  Both spaces then have the same size and the discrete derivative has
no kernel.  Other pairings leave an exact zero mode of the discrete
derivative, which shows up as a spurious state pinned near r=0.  The
kappa<0 block is obtained from the kappa>0 construction through the
identity h_kappa(V) = -P h_{-kappa}(-V) P, with P swapping G and F.  Both use nodal bases
with lumped (diagonal) quadrature masses, so after symmetric mass scaling the
matrix is real symmetric for real potentials and complex symmetric under
complex scaling.  The unequal degrees keep the discrete derivative free of
the doubled modes that centered differences produce for first-order
systems.  Element edges are placed at every potential breakpoint and at the
ends of the scaling transition, so each element sees a smooth integrand.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg

from .dirac_core import FieldConfig, PhysicalConfig, sample_mass_gap_margin
from .distortion import RadialScaling, ScalingSpec

log = logging.getLogger(__name__)


class RadialModelError(ValueError):
    """Invalid input to the radial model."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialChannel:
    kappa: int

    def __post_init__(self) -> None:
        if int(self.kappa) != self.kappa or self.kappa == 0:
            raise RadialModelError("kappa must be a nonzero integer")

    @property
    def degeneracy(self) -> int:
        return 2 * abs(self.kappa)


@dataclass(frozen=True)
class RadialGrid:
    """Spectral-element grid on [0, r_max].

    Parameters
    ----------
    r_max : float
        Outer radius (wall where F vanishes).
    N : int
        Target number of interior G nodes; the element count is N/degree.
    degree : int
        Polynomial degree of the G space in every element.
    breakpoints : tuple of float
        Additional radii forced to be element edges.
    stretch : float
        Growth ratio of successive element lengths beyond the outermost
        forced edge (1 gives a uniform mesh).  Useful at large h where the
        outgoing waves are long and decay slowly in the scaled exterior.
    max_stretch : float
        Cap on the exterior element length as a multiple of the base length.
    """

    r_max: float
    N: int = 256
    degree: int = 8
    breakpoints: tuple = ()
    stretch: float = 1.0
    max_stretch: float = 8.0

    def __post_init__(self) -> None:
        if self.N < 64:
            raise RadialModelError("N must be at least 64")
        if self.degree < 2:
            raise RadialModelError("degree must be at least 2")
        if self.r_max <= 0:
            raise RadialModelError("r_max must be positive")

    def refined(self, factor: int = 2) -> "RadialGrid":
        return replace(self, N=self.N * factor)

    @property
    def base_length(self) -> float:
        return self.r_max * self.degree / (self.N + 1)

    def edges(self, extra: Sequence[float] = ()) -> np.ndarray:
        fixed = sorted({0.0, float(self.r_max), *[float(b) for b in (*self.breakpoints, *extra) if 0 < b < self.r_max]})
        target = self.base_length
        out = [fixed[0]]
        for a, b in zip(fixed[:-2], fixed[1:-1]):
            n = max(1, math.ceil((b - a) / target - 1e-9))
            out.extend(np.linspace(a, b, n + 1)[1:].tolist())
        # exterior segment, optionally graded
        a, b = fixed[-2], fixed[-1]
        if self.stretch <= 1.0:
            n = max(1, math.ceil((b - a) / target - 1e-9))
            out.extend(np.linspace(a, b, n + 1)[1:].tolist())
        else:
            r, step = a, target
            while r + step < b - 0.5 * target:
                r += step
                out.append(r)
                step = min(step * self.stretch, self.max_stretch * target)
            out.append(b)
        return np.asarray(out)


@dataclass(frozen=True)
class ComplexScaling:
    """Exterior complex scaling r -> r + theta g_r(r)."""

    theta: complex
    scaling: ScalingSpec

    @property
    def label(self) -> str:
        return f"complex-scaling(theta={self.theta})"


@dataclass(frozen=True)
class CAP:
    """Position-only absorbing potential -i C0 psi(s) I2 rising from alpha0 to r_max."""

    strength: float
    alpha0: float

    @property
    def label(self) -> str:
        return f"CAP(C0={self.strength}, alpha0={self.alpha0})"


Method = Union[ComplexScaling, CAP, None]


@dataclass
class AssembledOperator:
    """Finite matrix realisation of one distorted radial channel.

    ``matrix`` is sparse and (complex) symmetric.  The first ``n_c`` unknowns
    are mass-scaled values of the continuous component at the element nodes
    ``r_c``, the remaining ``n_d`` are mass-scaled values of the other
    component at the Gauss nodes ``r_d``.  ``continuous_component`` names
    which of G and F is the continuous one.
    """

    matrix: sp.csr_matrix
    channel: RadialChannel
    method: Method
    h: float
    r_c: np.ndarray
    r_d: np.ndarray
    grid: RadialGrid
    info: dict = field(default_factory=dict)

    @property
    def n_c(self) -> int:
        return self.r_c.size

    @property
    def n_d(self) -> int:
        return self.r_d.size

    @property
    def continuous_component(self) -> str:
        return "G" if self.channel.kappa > 0 else "F"

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def symmetry_defect(self) -> float:
        """max |S - S^T| (complex symmetric); equals the self-adjoint defect at theta=0."""
        d = self.matrix - self.matrix.T
        return float(abs(d).max()) if d.nnz else 0.0

    def hermitian_defect(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def export_matrix_market(self, path) -> None:
        import scipy.io

        scipy.io.mmwrite(str(path), self.matrix, comment=f"kappa={self.channel.kappa} {self.info}")


# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _reference(p: int):
    """GLL nodes/weights (degree p), Gauss nodes/weights (p points) and the
    values and derivatives of the GLL Lagrange basis at the Gauss nodes."""
    Pp = npleg.Legendre.basis(p)
    inner = np.sort(np.real(Pp.deriv().roots()))
    x = np.concatenate([[-1.0], inner, [1.0]])
    w = 2.0 / (p * (p + 1) * Pp(x) ** 2)
    y, wy = npleg.leggauss(p)
    V = npleg.legvander(x, p)
    C = np.linalg.inv(V)  # columns: Legendre coefficients of each Lagrange basis polynomial
    Vy = npleg.legvander(y, p)
    dVy = np.stack([npleg.legval(y, npleg.legder(np.eye(p + 1)[m])) for m in range(p + 1)], axis=1)
    return x, w, y, wy, Vy @ C, dVy @ C


# ---------------------------------------------------------------------------
# Field validation and channel selection
# ---------------------------------------------------------------------------


def validate_radial_fields(fields: FieldConfig, phys: Optional[PhysicalConfig] = None) -> dict:
    """Check spherical symmetry and scalar form; estimate the decay exponent.

    Returns a report dict with keys ``accepted``, ``reason``, ``delta_hat``,
    ``mass_gap_margin`` and ``warnings``.  Raises RadialModelError for
    non-spherical or non-scalar input.
    """
    phys = phys or PhysicalConfig()
    report = {"accepted": False, "reason": "", "warnings": []}
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(24, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.logspace(-2, 2, 81)
    pts = radii[:, None, None] * dirs[None]
    vp = np.real(fields.v_plus(pts))
    vm = np.real(fields.v_minus(pts))
    scale = max(1.0, float(np.abs(vp).max()))
    if np.abs(vp - vm).max() > 1e-12 * scale:
        raise RadialModelError("non-spherical/non-scalar field: v+ differs from v-")
    if fields.A is not None and np.abs(fields.vector_potential(pts)).max() > 1e-12:
        raise RadialModelError("non-spherical/non-scalar field: vector potential present")
    if np.abs(vp - vp[:, :1]).max() > 1e-12 * scale:
        raise RadialModelError("non-spherical/non-scalar field: v depends on direction")
    prof = np.abs(vp[:, 0])
    tail = radii >= 5.0
    good = tail & (prof > 1e-250)
    if prof.max() == 0.0:
        delta_hat = math.inf
    elif good.sum() >= 5 and prof[tail].min() > 1e-250:
        slope = np.polyfit(np.log(radii[good]), np.log(prof[good]), 1)[0]
        delta_hat = float(-slope)
        # super-polynomial decay shows up as a steepening slope; call it infinite
        half = good.sum() // 2
        s1 = np.polyfit(np.log(radii[good][:half]), np.log(prof[good][:half]), 1)[0]
        s2 = np.polyfit(np.log(radii[good][half:]), np.log(prof[good][half:]), 1)[0]
        if s2 < 2 * s1 - 5:
            delta_hat = math.inf
    else:
        delta_hat = math.inf
    report["delta_hat"] = delta_hat
    report["mass_gap_margin"] = sample_mass_gap_margin(fields, phys)
    if delta_hat <= 3.0:
        report["warnings"].append(
            f"decay exponent {delta_hat:.3g} <= 3: the spectral shift function hypothesis delta > 3 fails"
        )
    report["accepted"] = True
    report["reason"] = "spherical scalar field"
    if prof.max() == 0.0:
        report["reason"] = "free operator; no resonances expected"
    return report


def interaction_radius(fields: FieldConfig, phys: PhysicalConfig, rel_tol: float = 1e-6) -> float:
    """Radius beyond which |e v(r)| < rel_tol * max |e v|."""
    prof = fields.radial
    if prof is None:
        return 0.0
    if prof.breakpoints:
        return float(max(prof.breakpoints))
    r = np.linspace(0.0, 200.0, 200001)
    v = np.abs(prof.value(r))
    vmax = v.max()
    if vmax == 0.0:
        return 0.0
    idx = np.nonzero(v >= rel_tol * vmax)[0]
    return float(r[idx[-1]])


def classical_kappa_bound(h: float, energy_window, fields: FieldConfig, phys: PhysicalConfig, rel_tol: float = 1e-6) -> float:
    """max over r <= r_int and E in the window of r sqrt((E - ev)^2 - m^2c^4)/(c h)."""
    lo, hi = float(energy_window[0]), float(energy_window[1])
    r_int = interaction_radius(fields, phys, rel_tol)
    if r_int == 0.0:
        return 0.0
    r = np.linspace(0.0, r_int, 2001)[1:]
    energies = np.linspace(lo, hi, 41)
    V = np.real(phys.e * fields.radial.value(r - 1e-12 * r_int))
    q = (energies[:, None] - V[None, :]) ** 2 - phys.mc2**2
    # only points where the kinetic energy sits on the same side as the window
    q = np.where(q > 0, q, 0.0)
    return float((r[None, :] * np.sqrt(q)).max() / (phys.c * h))


def channel_list(h: float, energy_window, fields: FieldConfig, phys: PhysicalConfig, margin: int = 1, rel_tol: float = 1e-6) -> list[RadialChannel]:
    """Channels with |kappa| <= kappa_max(h), the classical access bound plus ``margin``.

    A channel is included when the centrifugal barrier c h |kappa| / r lets a
    particle with energy in the window reach the region where the potential
    is non-negligible.  The list is ordered by |kappa| with kappa<0 first.
    """
    lo, hi = energy_window
    if not hi > lo:
        raise RadialModelError("empty energy window")
    mc2 = phys.mc2
    if lo < mc2 < hi or lo < -mc2 < hi or lo in (mc2, -mc2) or hi in (mc2, -mc2):
        raise RadialModelError("energy window must avoid the thresholds +-mc^2")
    bound = classical_kappa_bound(h, energy_window, fields, phys, rel_tol)
    if bound == 0.0:
        return []
    kmax = int(math.floor(bound)) + margin
    out = []
    for k in range(1, kmax + 1):
        out.append(RadialChannel(-k))
        out.append(RadialChannel(k))
    return out


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _potential(fields: FieldConfig, phys: PhysicalConfig, z):
    if fields.radial is None:
        return np.zeros_like(z)
    return phys.e * np.asarray(fields.radial.value(z), dtype=complex)


def cap_profile(r, alpha0: float, r_max: float):
    """psi((r - r_max)/(r_max - alpha0)) with psi(s) = exp(1 - 1/(1 - s^2)), zero below alpha0."""
    r = np.asarray(r, dtype=float)
    s = (r - r_max) / (r_max - alpha0)
    out = np.zeros_like(r)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _vmax(grid: RadialGrid, fields: FieldConfig, phys: PhysicalConfig) -> float:
    if fields.radial is None:
        return 0.0
    r = np.linspace(0, grid.r_max, 4001)
    return float(np.abs(np.real(_potential(fields, phys, r.astype(complex)))).max())


def resolved_energy(grid: RadialGrid, fields: FieldConfig, phys: PhysicalConfig) -> float:
    """Largest |E| whose local wavelength still spans two mean node spacings.

    Eigenvalues beyond it are set by the mesh rather than by the operator; in
    particular modes pinned inside single elements at the top of the discrete
    spectrum do not move with theta.
    """
    spacing = grid.base_length / grid.degree
    pmax = math.pi * phys.h / spacing
    return math.sqrt((phys.c * pmax) ** 2 + phys.mc2**2) - _vmax(grid, fields, phys)


def _resolution_check(grid: RadialGrid, fields: FieldConfig, phys: PhysicalConfig, energy_cap: Optional[float]) -> None:
    vmax = _vmax(grid, fields, phys)
    E = energy_cap if energy_cap is not None else 2.0 * phys.mc2
    pmax = math.sqrt(max((abs(E) + vmax) ** 2 - phys.mc2**2, 0.0)) / phys.c
    if pmax == 0:
        return
    wavelength = 2 * math.pi * phys.h / pmax
    spacing = grid.base_length / grid.degree
    if spacing > wavelength / 2:
        raise RadialModelError(
            f"grid too coarse: mean node spacing {spacing:.3g} exceeds half the local wavelength {wavelength / 2:.3g}"
        )


def assemble_channel_operator(
    ch: RadialChannel,
    method: Method,
    grid: RadialGrid,
    fields: FieldConfig,
    phys: PhysicalConfig,
    energy_cap: Optional[float] = None,
) -> AssembledOperator:
    """Assemble the mass-scaled radial operator for one channel.

    Parameters
    ----------
    ch : RadialChannel
    method : ComplexScaling, CAP or None
        ``None`` gives the undistorted self-adjoint discretization.
    grid : RadialGrid
    fields : FieldConfig
        Must be spherically symmetric (a radial profile or free).
    phys : PhysicalConfig
    energy_cap : float, optional
        Largest energy the caller cares about, used by the resolution check.

    Returns
    -------
    AssembledOperator
    """
    extra: list[float] = []
    theta = 0.0 + 0.0j
    gr: Optional[RadialScaling] = None
    if isinstance(method, ComplexScaling):
        spec = method.scaling
        if grid.r_max <= spec.K_radius:
            raise RadialModelError("r_max must exceed K_radius of the scaling function")
        gr = RadialScaling(spec)
        if abs(method.theta) * gr.gradient_bound >= 1.0:
            raise RadialModelError("|theta| too large for the scaling function")
        if fields.radial is not None and fields.radial.breakpoints and max(fields.radial.breakpoints) > spec.R0:
            raise RadialModelError("potential breakpoints must lie inside the unscaled ball r < R0")
        theta = complex(method.theta)
        extra += [spec.R0, spec.K_radius]
    elif isinstance(method, CAP):
        if not (0 < method.alpha0 < grid.r_max):
            raise RadialModelError("CAP onset alpha0 must lie inside (0, r_max)")
        extra.append(method.alpha0)
    elif method is not None:
        raise RadialModelError(f"unknown method {method!r}")
    if fields.radial is not None:
        extra += list(fields.radial.breakpoints)
    _resolution_check(grid, fields, phys, energy_cap)

    p = grid.degree
    xg, wg, yf, wf, Lval, Lder = _reference(p)
    edges = grid.edges(extra)
    n_el = edges.size - 1
    n_nodes = n_el * p + 1
    sgn = 1 if ch.kappa > 0 else -1
    kappa = abs(ch.kappa)
    chc = phys.c * phys.h

    mG = np.zeros(n_nodes, dtype=complex)
    aG = np.zeros(n_nodes, dtype=complex)
    rG = np.zeros(n_nodes)
    mF = np.empty(n_el * p, dtype=complex)
    aF = np.empty(n_el * p, dtype=complex)
    rF = np.empty(n_el * p)
    rows, cols, vals = [], [], []

    def path(r):
        if gr is None:
            return r.astype(complex), np.ones_like(r, dtype=complex)
        return r + theta * gr.value(r), 1.0 + theta * gr.derivative(r)

    for e in range(n_el):
        a, b = edges[e], edges[e + 1]
        half = 0.5 * (b - a)
        r_nodes = a + half * (xg + 1.0)
        s_nodes = a + half * (yf + 1.0)
        zg, dzg = path(r_nodes)
        zf, dzf = path(s_nodes)
        # evaluate the potential from inside the element to pick the correct side of a jump
        nudge = 1e-12 * (b - a) * np.sign(0.5 * (a + b) - r_nodes)
        zg_in, _ = path(r_nodes + nudge)
        gidx = e * p + np.arange(p + 1)
        wq = half * wg * dzg
        np.add.at(mG, gidx, wq)
        np.add.at(aG, gidx, wq * _potential(fields, phys, zg_in))
        rG[gidx] = r_nodes
        fidx = e * p + np.arange(p)
        mF[fidx] = half * wf * dzf
        aF[fidx] = _potential(fields, phys, zf)
        rF[fidx] = s_nodes
        # B[j, k] = ch * w_k * (phi_j'(s_k) + kappa z'(s_k) phi_j(s_k)/z(s_k))
        blk = chc * (half * wf)[:, None] * (Lder / half + kappa * (dzf / zf)[:, None] * Lval)
        blk = blk.T  # (p+1, p): G-node j by F-node k
        rows.append(np.repeat(gidx, p))
        cols.append(np.tile(fidx, p + 1))
        vals.append(blk.ravel())

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    B = sp.coo_matrix((vals, (rows, cols)), shape=(n_nodes, n_el * p)).tocsr()
    keep = np.arange(1, n_nodes)
    B = B[keep]
    mG, aG, rG = mG[keep], aG[keep], rG[keep]

    sG = np.sqrt(mG)
    sF = np.sqrt(mF)
    Bs = sp.diags(1.0 / sG) @ B @ sp.diags(1.0 / sF)
    dG = sgn * aG / mG
    dF = sgn * aF
    if isinstance(method, CAP):
        dG = dG - 1j * sgn * method.strength * cap_profile(rG, method.alpha0, grid.r_max)
        dF = dF - 1j * sgn * method.strength * cap_profile(rF, method.alpha0, grid.r_max)
    S = sp.bmat([[sp.diags(phys.mc2 + dG), Bs], [Bs.T, sp.diags(-phys.mc2 + dF)]], format="csr")
    if sgn < 0:
        S = -S
    info = {"elements": int(n_el), "degree": int(p), "n_c": int(rG.size), "n_d": int(rF.size)}
    return AssembledOperator(S, ch, method, phys.h, rG, rF, grid, info)
