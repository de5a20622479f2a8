"""Complex eigenvalue extraction, theta-stability filtering and counting.

Resonances are the eigenvalues of the distorted operator that do not move
when the distortion parameter changes; the rotated continuum does.  The
filter below compares spectra computed at two (or three) values of theta on
the same grid and keeps the matching points.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dirac_core import FieldConfig, PhysicalConfig
from .distortion import ScalingSpec, essential_curve
from .radial import (
    AssembledOperator,
    ComplexScaling,
    RadialChannel,
    RadialGrid,
    assemble_channel_operator,
    resolved_energy,
)

log = logging.getLogger(__name__)

DEFAULT_CAP = 4096
CLUSTER_RADIUS = 1e-7


class SolverError(RuntimeError):
    """Eigensolver failure or misuse (e.g. dimension above the dense cap)."""


class RegionError(ValueError):
    """Region query violating the separation from the rotated continuum."""


@dataclass(frozen=True)
class Resonance:
    """A theta-stable eigenvalue of one partial-wave channel.

    ``cluster_size`` counts eigenvalues merged within the cluster radius; a
    value above one flags a numerically multiple (possibly defective) point.
    """

    z: complex
    kappa: int
    degeneracy: int
    theta_residual: float
    grid_residual: float = math.nan
    cluster_size: int = 1

    def as_row(self) -> dict:
        return {
            "kappa": self.kappa,
            "degeneracy": self.degeneracy,
            "re_z": self.z.real,
            "im_z": self.z.imag,
            "theta_residual": self.theta_residual,
            "grid_residual": self.grid_residual,
        }


# ---------------------------------------------------------------------------
# Eigensolvers
# ---------------------------------------------------------------------------


def _sorted(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return z[np.lexsort((z.imag, z.real))]


def solve_spectrum(
    op,
    cap: int = DEFAULT_CAP,
    center: Optional[complex] = None,
    radius: Optional[float] = None,
    k: int = 60,
) -> np.ndarray:
    """Eigenvalues of an assembled operator, sorted by (Re, Im).

    Below ``cap`` the full spectrum comes from a dense QR/Schur solve.  Above
    it a disk (``center``, ``radius``) must be given and shift-invert Arnoldi
    returns the eigenvalues inside that disk with residual tolerance 1e-10.
    """
    A = op.matrix if isinstance(op, AssembledOperator) else op
    n = A.shape[0]
    if n <= cap:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        vals = sla.eigvals(dense, check_finite=True)
        if center is not None and radius is not None:
            vals = vals[np.abs(vals - center) <= radius]
        return _sorted(vals)
    if center is None or radius is None:
        raise SolverError(
            f"dimension {n} exceeds the dense cap {cap}; pass center and radius to use windowed shift-invert mode"
        )
    Ms = sp.csc_matrix(A)
    kk = min(k, n - 2)
    vals, vecs = spla.eigs(Ms, k=kk, sigma=center, which="LM", tol=1e-12)
    res = np.linalg.norm(Ms @ vecs - vecs * vals, axis=0) / np.maximum(1.0, np.abs(vals))
    ok = (res <= 1e-10) & (np.abs(vals - center) <= radius)
    if np.all(np.abs(vals - center) <= radius):
        log.warning("all %d shift-invert eigenvalues lie inside the disk; some may be missing", kk)
    return _sorted(vals[ok])


# ---------------------------------------------------------------------------
# Theta-stability filter
# ---------------------------------------------------------------------------


def _median_spacing(z: np.ndarray) -> float:
    if z.size < 2:
        return math.inf
    d = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))


def cluster_eigenvalues(z: Sequence[complex], radius: float = CLUSTER_RADIUS) -> list[tuple[complex, int]]:
    """Greedy single-linkage clusters; returns (mean, size) sorted by (Re, Im)."""
    z = _sorted(np.asarray(z, dtype=complex))
    used = np.zeros(z.size, dtype=bool)
    out = []
    for i in range(z.size):
        if used[i]:
            continue
        members = [i]
        used[i] = True
        j = 0
        while j < len(members):
            near = np.nonzero((~used) & (np.abs(z - z[members[j]]) <= radius))[0]
            used[near] = True
            members.extend(near.tolist())
            j += 1
        out.append((complex(z[members].mean()), len(members)))
    return out


def _match(a: np.ndarray, b: np.ndarray, tol: float) -> list[tuple[int, int, float]]:
    """One-to-one nearest matching of a to b within tol, closest pairs first."""
    if a.size == 0 or b.size == 0:
        return []
    d = np.abs(a[:, None] - b[None, :])
    ia, ib = np.nonzero(d <= tol)
    order = np.lexsort((ib, ia, d[ia, ib]))
    ta, tb, pairs = set(), set(), []
    for t in order:
        i, j = int(ia[t]), int(ib[t])
        if i in ta or j in tb:
            continue
        ta.add(i)
        tb.add(j)
        pairs.append((i, j, float(d[i, j])))
    pairs.sort()
    return pairs


def filter_resonances(
    eigs1,
    theta1: complex,
    eigs2,
    theta2: complex,
    tol: float,
    kappa: int = -1,
    cluster_radius: float = CLUSTER_RADIUS,
) -> list[Resonance]:
    """Keep eigenvalues with a partner within ``tol`` across two theta values.

    Parameters
    ----------
    eigs1, eigs2 : array_like of complex
        Spectra of the same channel on the same grid at ``theta1`` and ``theta2``.
    tol : float
        Matching tolerance.  A warning is issued when it exceeds the median
        nearest-neighbour spacing of ``eigs1``, where the filter cannot tell
        the continuum from resonances.
    kappa : int
        Channel label copied into the output.

    Returns
    -------
    list of Resonance
        Sorted by (Re, Im); the reported point is the theta1 eigenvalue.
    """
    if theta1 == theta2:
        raise ValueError("theta1 and theta2 must differ")
    a = np.asarray(eigs1, dtype=complex).ravel()
    b = np.asarray(eigs2, dtype=complex).ravel()
    spacing = _median_spacing(a)
    if tol > spacing:
        warnings.warn(f"filter tolerance {tol:.3g} exceeds the median eigenvalue spacing {spacing:.3g}; filter unreliable")
    pairs = _match(a, b, tol)
    if not pairs:
        return []
    kept = np.array([a[i] for i, _, _ in pairs])
    resid = {complex(a[i]): r for i, _, r in pairs}
    out = []
    for zc, size in cluster_eigenvalues(kept, cluster_radius):
        near = [resid[complex(z)] for z in kept if abs(z - zc) <= cluster_radius * max(size, 1)]
        out.append(Resonance(zc, int(kappa), 2 * abs(int(kappa)), float(max(near)), math.nan, size))
    return out


# ---------------------------------------------------------------------------
# Regions and counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionQuery:
    """Closed rectangle re_min <= Re z <= re_max, im_min <= Im z <= im_max.

    On the positive side the rectangle must sit above the rotated continuum
    of the branch through +mc^2, on the negative side below the mirrored
    branch.  A rectangle inside the strip |Re z| < mc^2 never meets the
    rotated continuum and is always admissible (it holds bound states).
    """

    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self) -> None:
        if not (self.re_max > self.re_min and self.im_max >= self.im_min):
            raise RegionError("empty region")

    @property
    def diameter(self) -> float:
        return math.hypot(self.re_max - self.re_min, self.im_max - self.im_min)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))

    def side(self, phys: PhysicalConfig) -> str:
        mc2 = phys.mc2
        if self.re_min > mc2:
            return "positive"
        if self.re_max < -mc2:
            return "negative"
        if -mc2 < self.re_min and self.re_max < mc2:
            return "gap"
        raise RegionError("region must lie in Re > mc^2, Re < -mc^2 or |Re| < mc^2")

    def validate(self, theta0: complex, phys: PhysicalConfig, n: int = 400) -> None:
        """Check that the closure avoids Gamma_theta0 and lies on the resonance side of it."""
        side = self.side(phys)
        if side == "gap":
            return
        xs = np.linspace(self.re_min, self.re_max, n)
        curve_im = _curve_imag_at(theta0, xs, phys)
        # the negative branch is the mirror image, lying above the real axis
        if side == "positive":
            bad = self.im_min <= curve_im
        else:
            bad = self.im_max >= -curve_im
        if np.any(bad):
            raise RegionError("region touches or crosses the rotated continuum Gamma_theta0")

    def contains(self, z: complex, pad: float = 0.0) -> bool:
        return (
            self.re_min - pad <= z.real <= self.re_max + pad
            and self.im_min - pad <= z.imag <= self.im_max + pad
        )


def _curve_imag_at(theta: complex, re_values: np.ndarray, phys: PhysicalConfig) -> np.ndarray:
    """Imaginary part of the positive branch of Gamma_theta at the given real parts."""
    lam_max = ((np.max(np.abs(re_values)) / phys.c) ** 2) * abs(1 + theta) ** 2 * 4 + 1.0
    lam = np.concatenate([[0.0], np.geomspace(1e-10, lam_max, 20000)])
    zp, _ = essential_curve(theta, lam, phys)
    order = np.argsort(zp.real)
    return np.interp(np.abs(re_values), zp.real[order], zp.imag[order])


def count_in_region(res: Iterable[Resonance], q: RegionQuery, theta0: Optional[complex] = None, phys: Optional[PhysicalConfig] = None) -> int:
    """Degeneracy-weighted number of resonances in the closed region."""
    if theta0 is not None:
        q.validate(theta0, phys or PhysicalConfig())
    pad = 1e-12 * max(1.0, q.diameter)
    return int(sum(r.degeneracy for r in res if q.contains(r.z, pad)))


def count_in_disk(
    res: Iterable[Resonance],
    lambda0: float,
    rho: float,
    h: Optional[float] = None,
    B: float = 10.0,
) -> int:
    """Degeneracy-weighted number of resonances with |z - lambda0| <= rho.

    When ``h`` is given the radius is compared with the band h/B <= rho <= B
    and a warning is issued outside it.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if h is not None and not (h / B <= rho <= B):
        warnings.warn(f"rho={rho:.3g} outside the admissible band [h/B, B] = [{h / B:.3g}, {B:.3g}]")
    return int(sum(r.degeneracy for r in res if abs(r.z - lambda0) <= rho))


# ---------------------------------------------------------------------------
# Symmetry checks
# ---------------------------------------------------------------------------


def symmetry_partner_check(res_H, res_partner, mode: str, tol: float) -> dict:
    """Match Res(H) against a partner set under z -> -conj(z) or z -> conj(z).

    Inputs may be Resonance objects or complex numbers.  Returns a report with
    the matched pairs, unmatched entries of each side and a ``bijection`` flag.
    """
    if mode not in ("minus-conjugate", "conjugate"):
        raise ValueError("mode must be 'minus-conjugate' or 'conjugate'")
    zH = np.array([getattr(r, "z", r) for r in res_H], dtype=complex)
    zP = np.array([getattr(r, "z", r) for r in res_partner], dtype=complex)
    mapped = -np.conj(zH) if mode == "minus-conjugate" else np.conj(zH)
    pairs = _match(mapped, zP, tol)
    mi = {i for i, _, _ in pairs}
    mj = {j for _, j, _ in pairs}
    return {
        "mode": mode,
        "tol": tol,
        "matched": [(complex(zH[i]), complex(zP[j]), d) for i, j, d in pairs],
        "max_defect": max((d for _, _, d in pairs), default=0.0),
        "unmatched_H": [complex(zH[i]) for i in range(zH.size) if i not in mi],
        "unmatched_partner": [complex(zP[j]) for j in range(zP.size) if j not in mj],
        "bijection": len(pairs) == zH.size == zP.size,
    }


# ---------------------------------------------------------------------------
# Channel pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelResult:
    kappa: int
    thetas: tuple
    spectra: tuple
    resonances: tuple
    unresolved: tuple = ()


def channel_resonances(
    ch: RadialChannel,
    thetas: Sequence[complex],
    scaling: ScalingSpec,
    grid: RadialGrid,
    fields: FieldConfig,
    phys: PhysicalConfig,
    tol: float,
    region: Optional[RegionQuery] = None,
    refine_grid: bool = False,
    cap: int = DEFAULT_CAP,
) -> ChannelResult:
    """Resonances of one channel from two or three theta values.

    The first two thetas define the filter; a third one, when given, must
    reproduce every kept point within 3 tol and the theta residual becomes the
    largest deviation seen.  With ``refine_grid`` the first theta is repeated
    on a grid of twice the resolution to fill ``grid_residual``.  Stable
    points with |Re z| above ``resolved_energy`` of the grid are mesh
    artifacts; they are moved to ``unresolved`` instead of being reported.
    """
    if len(thetas) < 2:
        raise ValueError("need at least two theta values")
    center = radius = None
    if region is not None:
        center, radius = region.center, 0.5 * region.diameter * 1.05
    spectra = []
    for th in thetas:
        op = assemble_channel_operator(ch, ComplexScaling(th, scaling), grid, fields, phys)
        spectra.append(solve_spectrum(op, cap=cap, center=center, radius=radius))
    found = filter_resonances(spectra[0], thetas[0], spectra[1], thetas[1], tol, kappa=ch.kappa)
    e_res = resolved_energy(grid, fields, phys)
    unresolved = tuple(r.z for r in found if abs(r.z.real) > e_res)
    found = [r for r in found if abs(r.z.real) <= e_res]
    if region is not None and max(abs(region.re_min), abs(region.re_max)) > e_res:
        warnings.warn(f"region reaches |Re z| > {e_res:.4g}, beyond the energies the grid resolves")
    if region is not None:
        pad = 1e-12 * max(1.0, region.diameter)
        found = [r for r in found if region.contains(r.z, pad)]
    out = []
    for r in found:
        resid = r.theta_residual
        ok = True
        for sp_extra in spectra[2:]:
            d = float(np.min(np.abs(sp_extra - r.z))) if sp_extra.size else math.inf
            resid = max(resid, d)
            ok = ok and d <= 3 * tol
        if not ok:
            continue
        out.append(Resonance(r.z, r.kappa, r.degeneracy, resid, r.grid_residual, r.cluster_size))
    if refine_grid and out:
        op = assemble_channel_operator(ch, ComplexScaling(thetas[0], scaling), grid.refined(), fields, phys)
        fine = solve_spectrum(op, cap=max(cap, op.shape[0]), center=center, radius=radius)
        out = [
            Resonance(r.z, r.kappa, r.degeneracy, r.theta_residual, float(np.min(np.abs(fine - r.z))), r.cluster_size)
            for r in out
        ]
    return ChannelResult(ch.kappa, tuple(thetas), tuple(spectra), tuple(out), unresolved)


def merge_resonances(results: Iterable[ChannelResult]) -> list[Resonance]:
    """Flatten per-channel results in deterministic (kappa, Re z, Im z) order."""
    allr = [r for cr in results for r in cr.resonances]
    return sorted(allr, key=lambda r: (r.kappa, r.z.real, r.z.imag))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("kappa", "degeneracy", "re_z", "im_z", "theta_residual", "grid_residual")


def write_csv(res: Iterable[Resonance], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in res:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.as_row().items()})


def to_json(res: Iterable[Resonance]) -> str:
    rows = []
    for r in res:
        d = asdict(r)
        d["z"] = [r.z.real, r.z.imag]
        rows.append(d)
    return json.dumps(rows, indent=2, allow_nan=True)
