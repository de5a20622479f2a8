"""Small-time parametrix of the Dirac propagator.

Characteristics of the branch Hamiltonians H^pm, eikonal phases built from
them, the p-vector with the null eigenvectors of
M^pm = p5 + sum_j p_j alpha_j + p4 beta, the Rubinow-Keller identities and
the leading transport amplitude.  A reduced one-dimensional two-component
model compares the resulting Fourier integral operator against direct
time stepping.

Transport sign
--------------
Multiplying l_k L(sigma_1 r_1 + sigma_2 r_2) = 0 by (-+2 p5 u)^-1 and using the
Rubinow-Keller identities gives

    D sigma = -(-+2 p5 u)^-1 [l_k L(r_i)] sigma,

with D = d/dt + a . grad along the characteristic.  ``transport_residual``
checks l_k L(E_0) = 0 by finite differences, independently of this form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .dirac_core import (
    DiracMatrixSet,
    FieldConfig,
    I4,
    PhysicalConfig,
    SymbolPoint,
    anticommutator_defect,
    standard_dirac_matrices,
    symbol,
    symbol_eigenvalues,
    symbol_projections,
)

CAUSTIC_COND = 1e6


class ParametrixError(RuntimeError):
    """Caustics, degenerate eigenvectors or integrator failures."""


# ---------------------------------------------------------------------------
# Branch Hamiltonians with derivatives
# ---------------------------------------------------------------------------


class BranchHamiltonian:
    """H^s(x, xi) = s sqrt(|c xi - e A|^2 + p4^2) + shift for s = +-1, in d dimensions.

    Parameters
    ----------
    sign : int
        Branch, +1 or -1.
    d : int
        Space dimension (3 for the Dirac operator, 1 for the reduced model).
    shift, p4 : callable
        x -> e(v+ + v-)/2 and x -> mc^2 + e(v+ - v-)/2 on arrays (..., d).
    grad_shift, grad_p4 : callable
        Their gradients (..., d).
    A, jac_A : callable or None
        e-free vector potential A(x) (..., d) and its Jacobian (..., d, d)
        with jac_A[..., j, k] = d_k A_j.
    """

    def __init__(self, sign, d, c, e, shift, p4, grad_shift, grad_p4, A=None, jac_A=None):
        if sign not in (1, -1):
            raise ValueError("branch sign must be +1 or -1")
        self.s, self.d, self.c, self.e = sign, d, c, e
        self._shift, self._p4, self._gs, self._gp4 = shift, p4, grad_shift, grad_p4
        self._A, self._jA = A, jac_A

    @classmethod
    def from_fields(cls, sign: int, fields: FieldConfig, phys: PhysicalConfig) -> "BranchHamiltonian":
        e = phys.e
        prof = fields.radial
        if prof is not None and fields.A is None:
            def v(x):
                return np.real(prof.value(np.linalg.norm(x, axis=-1)))

            def gv(x):
                r = np.linalg.norm(x, axis=-1)
                safe = np.where(r > 0, r, 1.0)
                return (np.real(prof.derivative(r)) / safe)[..., None] * x

            return cls(sign, 3, phys.c, e, lambda x: e * v(x), lambda x: phys.mc2 + 0.0 * v(x),
                       lambda x: e * gv(x), lambda x: np.zeros_like(np.asarray(x, dtype=float)))

        def vp(x):
            return np.real(fields.v_plus(x))

        def vm(x):
            return np.real(fields.v_minus(x))

        shift = lambda x: 0.5 * e * (vp(x) + vm(x))
        p4 = lambda x: phys.mc2 + 0.5 * e * (vp(x) - vm(x))
        A = None if fields.A is None else (lambda x: np.real(fields.vector_potential(x)))
        return cls(sign, 3, phys.c, e, shift, p4, _fd_grad(shift), _fd_grad(p4), A, None if A is None else _fd_jac(A))

    def _p(self, x, xi):
        p = self.c * xi
        if self._A is not None:
            p = p - self.e * self._A(x)
        return p

    def value(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        p = self._p(x, xi)
        p4 = self._p4(x)
        return self.s * np.sqrt(np.sum(p * p, axis=-1) + p4 * p4) + self._shift(x)

    def gradients(self, x, xi):
        """(dH/dx, dH/dxi) on arrays (..., d)."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        p = self._p(x, xi)
        p4 = self._p4(x)
        root = np.sqrt(np.sum(p * p, axis=-1) + p4 * p4)[..., None]
        Hxi = self.s * self.c * p / root
        gx = p4[..., None] * self._gp4(x)
        if self._A is not None:
            gx = gx - self.e * np.einsum("...jk,...j->...k", self._jA(x), p)
        Hx = self.s * gx / root + self._gs(x)
        return Hx, Hxi


def _fd_grad(f, step=1e-5):
    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        for k in range(x.shape[-1]):
            dx = np.zeros(x.shape[-1])
            dx[k] = step
            out[..., k] = (
                -f(x + 2 * dx) + 8 * f(x + dx) - 8 * f(x - dx) + f(x - 2 * dx)
            ) / (12 * step)
        return out

    return g


def _fd_jac(F, step=1e-5):
    def J(x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        out = np.empty(x.shape + (d,))
        for k in range(d):
            dx = np.zeros(d)
            dx[k] = step
            out[..., :, k] = (-F(x + 2 * dx) + 8 * F(x + dx) - 8 * F(x - dx) + F(x - 2 * dx)) / (12 * step)
        return out

    return J


# ---------------------------------------------------------------------------
# Symplectic flow
# ---------------------------------------------------------------------------

_SQ3 = math.sqrt(3.0)
_GL_A = np.array([[0.25, 0.25 - _SQ3 / 6], [0.25 + _SQ3 / 6, 0.25]])
_GL_B = np.array([0.5, 0.5])


def _gl4_step(H: BranchHamiltonian, x, xi, dt, tol=1e-15, maxit=60):
    """One step of the two-stage Gauss-Legendre (order 4, symplectic, symmetric) method.

    Works on batches: x and xi have shape (..., d).  Returns the new state and
    the action increment int (xi . xdot - H) dt.
    """
    Hx, Hxi = H.gradients(x, xi)
    kx = np.stack([Hxi, Hxi])
    kxi = np.stack([-Hx, -Hx])
    for _ in range(maxit):
        Xs = x[None] + dt * np.einsum("ij,j...->i...", _GL_A, kx)
        Ps = xi[None] + dt * np.einsum("ij,j...->i...", _GL_A, kxi)
        Hx_s, Hxi_s = H.gradients(Xs, Ps)
        nkx, nkxi = Hxi_s, -Hx_s
        diff = max(float(np.max(np.abs(nkx - kx))), float(np.max(np.abs(nkxi - kxi))))
        kx, kxi = nkx, nkxi
        if diff <= tol * max(1.0, float(np.max(np.abs(kx)))):
            break
    else:
        raise ParametrixError("Gauss-Legendre stage iteration did not converge; reduce the step")
    Xs = x[None] + dt * np.einsum("ij,j...->i...", _GL_A, kx)
    Ps = xi[None] + dt * np.einsum("ij,j...->i...", _GL_A, kxi)
    lag = np.sum(Ps * kx, axis=-1) - H.value(Xs, Ps)
    x_new = x + dt * np.einsum("j,j...->...", _GL_B, kx)
    xi_new = xi + dt * np.einsum("j,j...->...", _GL_B, kxi)
    dS = dt * np.einsum("j,j...->...", _GL_B, lag)
    return x_new, xi_new, dS


@dataclass
class Characteristic:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    action: np.ndarray
    energy: np.ndarray

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(1.0, abs(e0)))


def _hamiltonian(branch, fields, phys) -> BranchHamiltonian:
    if isinstance(branch, BranchHamiltonian):
        return branch
    return BranchHamiltonian.from_fields(_sign(branch), fields, phys)


def _sign(branch) -> int:
    if branch in (1, "+", "plus"):
        return 1
    if branch in (-1, "-", "minus"):
        return -1
    raise ValueError(f"unknown branch {branch!r}")


def hamiltonian_flow(
    branch,
    start: SymbolPoint,
    t_final: float,
    fields: FieldConfig,
    phys: PhysicalConfig,
    n_steps: Optional[int] = None,
    delta1: float = 1.0,
) -> Characteristic:
    """Integrate xdot = dH/dxi, xidot = -dH/dx with the 4th-order Gauss-Legendre scheme.

    ``branch`` is +1/-1 (or a prepared BranchHamiltonian).  |t_final| must not
    exceed ``delta1``.
    """
    if abs(t_final) > delta1:
        raise ParametrixError(f"|t_final|={abs(t_final)} exceeds the small-time window {delta1}")
    H = _hamiltonian(branch, fields, phys)
    n_steps = n_steps or max(20, int(math.ceil(abs(t_final) * 200)))
    dt = t_final / n_steps
    x = np.asarray(start.x, dtype=float)
    xi = np.asarray(start.xi, dtype=float)
    xs, xis, S = [x], [xi], [0.0]
    for _ in range(n_steps):
        x, xi, dS = _gl4_step(H, x, xi, dt)
        xs.append(x)
        xis.append(xi)
        S.append(S[-1] + float(dS))
    xs, xis = np.array(xs), np.array(xis)
    return Characteristic(np.linspace(0.0, t_final, n_steps + 1), xs, xis, np.array(S), H.value(xs, xis))


def flow_batch(H: BranchHamiltonian, y, xi, t, n_steps: int):
    """Flow a batch of starting points (..., d) with common step count; returns x, xi, S at time t."""
    x = np.array(y, dtype=float)
    p = np.array(xi, dtype=float)
    S = np.zeros(x.shape[:-1])
    dt = t / n_steps
    for _ in range(n_steps):
        x, p, dS = _gl4_step(H, x, p, dt)
        S = S + dS
    return x, p, S


# ---------------------------------------------------------------------------
# Eikonal phase
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Patch:
    """Axis-aligned box center +- half_width in x."""

    center: tuple
    half_width: float

    def samples(self, n: int) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        g = np.linspace(-self.half_width, self.half_width, n)
        mesh = np.stack(np.meshgrid(*([g] * c.size), indexing="ij"), axis=-1).reshape(-1, c.size)
        return c + mesh


class EikonalPhase:
    """Phi^pm(t, x, xi) for a fixed xi, built from characteristics with Phi(0) = x . xi.

    The phase at (t, x) is y . xi + S(t; y) where the characteristic from
    (y, xi) reaches x at time t; y is found by Newton iteration with a
    finite-difference flow Jacobian.
    """

    def __init__(self, H: BranchHamiltonian, xi, patch: Patch, t_window: float, steps_per_unit: int = 200):
        self.H = H
        self.xi = np.asarray(xi, dtype=float)
        self.patch = patch
        self.t_window = float(t_window)
        self.steps_per_unit = steps_per_unit
        self._check_caustics()

    @property
    def branch(self) -> int:
        return self.H.s

    def _steps(self, t):
        return max(4, int(math.ceil(abs(t) * self.steps_per_unit)))

    def flow(self, y, t):
        xi = np.broadcast_to(self.xi, np.shape(y))
        return flow_batch(self.H, np.asarray(y, float), xi, t, self._steps(t))

    def flow_jacobian(self, y, t, eps=1e-5):
        """(dx/dy, dxi/dy) at time t, by centered differences in y; y may be a batch (n, d)."""
        Jx, Jp, _, _, _ = self._flow_with_jacobian(np.atleast_2d(np.asarray(y, float)), t, eps)
        if np.ndim(y) == 1:
            return Jx[0], Jp[0]
        return Jx, Jp

    def _flow_with_jacobian(self, Y, t, eps=1e-5):
        n, d = Y.shape
        shifts = np.concatenate([np.zeros((1, d)), eps * np.eye(d), -eps * np.eye(d)])
        pts = (Y[:, None, :] + shifts[None]).reshape(-1, d)
        X, P, S = self.flow(pts, t)
        X = X.reshape(n, 2 * d + 1, d)
        P = P.reshape(n, 2 * d + 1, d)
        S = S.reshape(n, 2 * d + 1)
        Jx = np.swapaxes((X[:, 1:d + 1] - X[:, d + 1:]) / (2 * eps), 1, 2)
        Jp = np.swapaxes((P[:, 1:d + 1] - P[:, d + 1:]) / (2 * eps), 1, 2)
        return Jx, Jp, X[:, 0], P[:, 0], S[:, 0]

    def _check_caustics(self, n_t: int = 4, n_x: int = 3, eps: float = 1e-5) -> None:
        Y = self.patch.samples(n_x)
        n, d = Y.shape
        shifts = np.concatenate([eps * np.eye(d), -eps * np.eye(d)])
        pts = (Y[:, None, :] + shifts[None]).reshape(-1, d)
        p = np.broadcast_to(self.xi, pts.shape).copy()
        x = pts.copy()
        n_steps = self._steps(self.t_window)
        n_steps += (-n_steps) % n_t
        dt = self.t_window / n_steps
        for k in range(1, n_steps + 1):
            x, p, _ = _gl4_step(self.H, x, p, dt)
            if k % (n_steps // n_t) == 0:
                Xr = x.reshape(n, 2 * d, d)
                Jx = np.swapaxes((Xr[:, :d] - Xr[:, d:]) / (2 * eps), 1, 2)
                if np.max(np.linalg.cond(Jx)) > CAUSTIC_COND:
                    raise ParametrixError(
                        f"caustic inside the window; largest valid window about {(k - n_steps // n_t) * dt:.3g}"
                    )

    def foot(self, t, x, tol=1e-13, maxit=50):
        """Starting points y with x(t; y) = x; x of shape (d,) or (n, d)."""
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        if t == 0:
            return x.copy()
        _, Hxi = self.H.gradients(X, np.broadcast_to(self.xi, X.shape))
        Y = X - t * Hxi
        for _ in range(maxit):
            Jx, _, Xt, _, _ = self._flow_with_jacobian(Y, t)
            r = Xt - X
            if np.max(np.abs(r)) < tol:
                return Y[0] if x.ndim == 1 else Y
            Y = Y - np.linalg.solve(Jx, r[..., None])[..., 0]
        raise ParametrixError("Newton iteration for the characteristic foot did not converge")

    def phi(self, t, x):
        """Phase at (t, x); x of shape (d,) or (n, d)."""
        x = np.asarray(x, dtype=float)
        if t == 0:
            return x @ self.xi
        y = self.foot(t, x)
        _, _, S = self.flow(y, t)
        return y @ self.xi + S

    def grad(self, t, x):
        """grad_x Phi = xi(t; y)."""
        if t == 0:
            return np.broadcast_to(self.xi, np.shape(x)).copy()
        y = self.foot(t, x)
        _, p, _ = self.flow(y, t)
        return p

    def dt(self, t, x):
        """d_t Phi = -H(x, grad Phi)."""
        return -self.H.value(np.asarray(x, float), self.grad(t, x))

    def hessian(self, t, x):
        d = self.xi.size
        if t == 0:
            return np.zeros((d, d))
        y = self.foot(t, x)
        Jx, Jp = self.flow_jacobian(y, t)
        return Jp @ np.linalg.inv(Jx)

    def residual(self, n_t: int = 3, n_x: int = 3, step: float = 1e-3) -> float:
        """max |d_t Phi + H(x, grad_x Phi)| with both derivatives from finite differences of Phi."""
        d = self.xi.size
        X = self.patch.samples(n_x)
        w = np.array([1.0, -8.0, 8.0, -1.0]) / (12 * step)
        offs = np.array([-2, -1, 1, 2]) * step
        worst = 0.0
        for t in np.linspace(self.t_window / n_t, self.t_window, n_t) - 2 * step:
            dtp = sum(wk * self.phi(t + o, X) for wk, o in zip(w, offs))
            stencil = (X[:, None, None, :] + offs[None, None, :, None] * np.eye(d)[None, :, None, :]).reshape(-1, d)
            vals = self.phi(t, stencil).reshape(X.shape[0], d, 4)
            g = vals @ w
            worst = max(worst, float(np.max(np.abs(dtp + self.H.value(X, g)))))
        return worst


def eikonal_phase(branch, xi, patch: Patch, t_window: float, fields: FieldConfig, phys: PhysicalConfig, **kw) -> EikonalPhase:
    return EikonalPhase(_hamiltonian(branch, fields, phys), xi, patch, t_window, **kw)


# ---------------------------------------------------------------------------
# p-vector and null eigenvectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PVector:
    p1: float
    p2: float
    p3: float
    p4: float
    p5: float

    @property
    def spatial(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3, self.p4, self.p5])

    def null_defect(self, branch) -> float:
        s = _sign(branch)
        root = math.sqrt(self.p1**2 + self.p2**2 + self.p3**2 + self.p4**2)
        return abs(self.p5 + s * root)


def random_null_pvector(rng: np.random.Generator, branch, scale: float = 3.0) -> PVector:
    """p1..p4 random (p4 kept away from 0), p5 = -+ sqrt(sum p^2)."""
    p = rng.normal(scale=scale, size=4)
    p[3] = math.copysign(abs(p[3]) + 0.1, p[3]) if rng.random() < 0.1 else abs(p[3]) + 0.1
    s = _sign(branch)
    return PVector(*p, -s * float(np.sqrt(np.sum(p * p))))


def p_vector(branch, t, x, xi, phase: Optional[EikonalPhase], fields: FieldConfig, phys: PhysicalConfig) -> PVector:
    """p_j = c d_j Phi - e A_j, p4 = mc^2 + e(v+ - v-)/2, p5 = d_t Phi + e(v+ + v-)/2."""
    x = np.asarray(x, dtype=float)
    H = phase.H if phase is not None else _hamiltonian(branch, fields, phys)
    if phase is None or t == 0:
        grad = np.asarray(xi, dtype=float)
        dtphi = -float(H.value(x, grad))
    else:
        grad = phase.grad(t, x)
        dtphi = -float(H.value(x, grad))
    p = H._p(x, grad)
    p4 = float(H._p4(x))
    p5 = dtphi + float(H._shift(x))
    return PVector(float(p[0]), float(p[1]), float(p[2]), p4, p5)


def _rvec(q, s):
    """Right null vectors as linear functions of q = (q1..q5) for branch s."""
    q1, q2, q3, q4, q5 = q
    u = q4 - s * q5
    v = q3
    wp = s * q1 + 1j * q2
    wm = s * q1 - 1j * q2
    if s > 0:
        r1 = np.array([u, 0, v, wp], dtype=complex)
        r2 = np.array([0, u, wm, -v], dtype=complex)
    else:
        r1 = np.array([wp, v, 0, u], dtype=complex)
        r2 = np.array([-v, wm, u, 0], dtype=complex)
    return r1, r2


def null_eigenvectors(p: PVector, branch):
    """(r1, r2, l1, l2) with M r_k = 0, l_k M = 0 and l_nu r_k = (-+2 p5 u) delta."""
    s = _sign(branch)
    if p.p5 == 0:
        raise ParametrixError("p5 vanishes")
    u = p.p4 - s * p.p5
    if abs(u) < 1e-14 * max(1.0, abs(p.p4) + abs(p.p5)):
        raise ParametrixError("u = p4 -+ p5 vanishes: branch degeneracy")
    r1, r2 = _rvec(p.as_array(), s)
    return r1, r2, r1.conj(), r2.conj()


def M_matrix(p: PVector, mset: Optional[DiracMatrixSet] = None) -> np.ndarray:
    mset = mset or standard_dirac_matrices()
    return p.p5 * I4 + sum(pj * a for pj, a in zip(p.spatial, mset.alpha)) + p.p4 * mset.beta


def eigenvector_report(p: PVector, branch, mset: Optional[DiracMatrixSet] = None) -> dict:
    """Kernel residuals, normalization defect and conditioning of [r1 r2]."""
    s = _sign(branch)
    M = M_matrix(p, mset)
    r1, r2, l1, l2 = null_eigenvectors(p, branch)
    norm = -s * 2 * p.p5 * (p.p4 - s * p.p5)
    R = np.stack([r1, r2], axis=1)
    Lm = np.stack([l1, l2], axis=0)
    gram = Lm @ R
    scale = max(1.0, abs(norm))
    return {
        "kernel_right": float(max(np.abs(M @ r1).max(), np.abs(M @ r2).max())) / scale,
        "kernel_left": float(max(np.abs(l1 @ M).max(), np.abs(l2 @ M).max())) / scale,
        "normalization": float(np.abs(gram - norm * np.eye(2)).max()) / scale,
        "condition": float(np.linalg.cond(R)),
    }


def rubinow_keller_defect(p: PVector, branch, mset: Optional[DiracMatrixSet] = None) -> float:
    """max_{j,k,mu} |l_j M_mu r_k - (d lambda/d p_mu)(-+2 p5 u) delta_jk| / scale.

    Covers alpha_1..3, beta and the identity, hence also the Lemma's
    consequences l1 alpha r1 = l2 alpha r2 and vanishing cross terms.
    """
    mset = mset or standard_dirac_matrices()
    s = _sign(branch)
    r1, r2, l1, l2 = null_eigenvectors(p, branch)
    root = math.sqrt(p.p1**2 + p.p2**2 + p.p3**2 + p.p4**2)
    dlam = [s * p.p1 / root, s * p.p2 / root, s * p.p3 / root, s * p.p4 / root, 1.0]
    Ms = [*mset.alpha, mset.beta, I4]
    norm = -s * 2 * p.p5 * (p.p4 - s * p.p5)
    worst = 0.0
    R = (r1, r2)
    Lv = (l1, l2)
    for mu in range(5):
        for j in range(2):
            for k in range(2):
                val = Lv[j] @ Ms[mu] @ R[k]
                target = dlam[mu] * norm if j == k else 0.0
                worst = max(worst, abs(val - target))
    return worst / max(1.0, abs(norm))


def identity_suite(fields: FieldConfig, phys: PhysicalConfig, n_points: int, rng: np.random.Generator, box: float = 3.0) -> dict:
    """Largest defects of the exact algebraic identities over random points.

    Keys: ``anticommutator``, ``projector`` (idempotence, completeness and
    mutual orthogonality), ``eigen`` (D Pi^pm = H^pm Pi^pm) for nu = 0 and 1,
    and ``null_vectors``, ``normalization`` and ``rubinow_keller`` on random
    null p-vectors of both branches.
    """
    mset = standard_dirac_matrices()
    out = {"anticommutator": anticommutator_defect(mset), "projector": 0.0, "eigen": 0.0}
    for _ in range(n_points):
        p = SymbolPoint(rng.uniform(-box, box, 3), rng.normal(scale=box, size=3))
        for nu in (0, 1):
            D = symbol(nu, p, fields, phys, mset)
            Pp, Pm = symbol_projections(nu, p, fields, phys, mset)
            Hp, Hm = symbol_eigenvalues(nu, p, fields, phys)
            scale = max(1.0, float(np.abs(D).max()))
            proj = max(
                np.abs(Pp @ Pp - Pp).max(),
                np.abs(Pm @ Pm - Pm).max(),
                np.abs(Pp + Pm - I4).max(),
                np.abs(Pp @ Pm).max(),
                np.abs(Pp - Pp.conj().T).max(),
            )
            eig = max(np.abs(D @ Pp - Hp * Pp).max(), np.abs(D @ Pm - Hm * Pm).max()) / scale
            out["projector"] = max(out["projector"], float(proj))
            out["eigen"] = max(out["eigen"], float(eig))
    out.update({"null_vectors": 0.0, "normalization": 0.0, "rubinow_keller": 0.0, "max_condition": 1.0})
    for _ in range(n_points):
        for b in (1, -1):
            pv = random_null_pvector(rng, b, scale=box)
            rep = eigenvector_report(pv, b, mset)
            out["null_vectors"] = max(out["null_vectors"], rep["kernel_right"], rep["kernel_left"])
            out["normalization"] = max(out["normalization"], rep["normalization"])
            out["max_condition"] = max(out["max_condition"], rep["condition"])
            out["rubinow_keller"] = max(out["rubinow_keller"], rubinow_keller_defect(pv, b, mset))
    return out


# ---------------------------------------------------------------------------
# Leading transport amplitude (3D)
# ---------------------------------------------------------------------------


class TransportAmplitude:
    """E_0^pm(t, x) = sigma_1 r_1 + sigma_2 r_2 along characteristics.

    sigma (2 x 4, one column per unit vector N_1..N_4) solves
    d sigma/dt = -(-+2 p5 u)^-1 [l_k L(r_i)] sigma with sigma(0) the
    coordinates of Pi_1^pm N_col in the basis r_1, r_2.
    """

    def __init__(self, phase: EikonalPhase, fields: FieldConfig, phys: PhysicalConfig, mset: Optional[DiracMatrixSet] = None):
        self.phase = phase
        self.H = phase.H
        self.fields = fields
        self.phys = phys
        self.mset = mset or standard_dirac_matrices()
        self._hess_fd = 1e-5

    def _hessH(self, x, xi):
        """Second derivatives of H (Hxx, Hxxi, Hxixi) by centered differences of the gradient."""
        d = x.size
        eps = self._hess_fd
        Hxx = np.empty((d, d))
        Hxxi = np.empty((d, d))  # [i, j] = d^2 H / dx_i dxi_j
        Hxixi = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = eps
            gxp, gpp = self.H.gradients(x + e, xi)
            gxm, gpm = self.H.gradients(x - e, xi)
            Hxx[:, k] = (gxp - gxm) / (2 * eps)
            Hxxi[k, :] = (gpp - gpm) / (2 * eps)
            gxp, gpp = self.H.gradients(x, xi + e)
            gxm, gpm = self.H.gradients(x, xi - e)
            Hxixi[:, k] = (gpp - gpm) / (2 * eps)
        return Hxx, Hxxi, Hxixi

    def _p_derivs(self, x, xi, hess):
        """p-vector and its t and x derivatives at a point with grad Phi = xi."""
        s, c, e = self.H.s, self.H.c, self.H.e
        d = x.size
        p = self.H._p(x, xi)
        p4 = float(self.H._p4(x))
        root = math.sqrt(float(p @ p) + p4 * p4)
        p5 = -s * root
        Hx, Hxi = self.H.gradients(x, xi)
        dp = c * hess  # dp[j, k] = d_k p_j
        if self.H._A is not None:
            dp = dp - e * self.H._jA(x)
        dp4 = self.H._gp4(x)
        dp5 = -s * (p @ dp + p4 * dp4) / root
        dtp = -c * (Hx + Hxi @ hess)
        dtp5 = -s * float(p @ dtp) / root
        P = np.array([*p, p4, p5])
        dX = np.zeros((d, 5))
        dX[:, :3] = dp.T
        dX[:, 3] = dp4
        dX[:, 4] = dp5
        dT = np.array([*dtp, 0.0, dtp5])
        return P, dT, dX

    def _rhs_matrix(self, x, xi, hess):
        s = self.H.s
        P, dT, dX = self._p_derivs(x, xi, hess)
        r = _rvec(P, s)
        Lr = []
        for i in range(2):
            v = _rvec(dT, s)[i].copy()
            for k in range(3):
                v = v + self.phys.c * self.mset.alpha[k] @ _rvec(dX[k], s)[i]
            Lr.append(v)
        l = (r[0].conj(), r[1].conj())
        u = P[3] - s * P[4]
        norm = -s * 2 * P[4] * u
        if abs(u) < 1e-14:
            raise ParametrixError(f"u vanishes at x={x}")
        K = np.array([[l[k] @ Lr[i] for i in range(2)] for k in range(2)])
        return -K / norm, r

    def _initial_sigma(self, y, xi):
        p0 = self.H._p(y, xi)
        Pp, Pm = symbol_projections(1, SymbolPoint(y, xi), self.fields, self.phys, self.mset)
        Pi = Pp if self.H.s > 0 else Pm
        pv = PVector(*p0, float(self.H._p4(y)), -self.H.s * math.sqrt(float(p0 @ p0) + float(self.H._p4(y)) ** 2))
        r1, r2, _, _ = null_eigenvectors(pv, self.H.s)
        R = np.stack([r1, r2], axis=1)
        sig, *_ = np.linalg.lstsq(R, Pi, rcond=None)
        return sig

    def along(self, y, t, rtol=1e-11):
        """Integrate (x, xi, Jx, Jxi, sigma) from the foot y to time t; returns E_0 and the endpoint."""
        d = 3
        xi0 = self.phase.xi
        sig0 = self._initial_sigma(np.asarray(y, float), xi0)

        def rhs(_, Y):
            x = Y[:d]
            p = Y[d:2 * d]
            Jx = Y[2 * d:2 * d + 9].reshape(d, d)
            Jp = Y[2 * d + 9:2 * d + 18].reshape(d, d)
            sig = (Y[2 * d + 18:2 * d + 26] + 1j * Y[2 * d + 26:]).reshape(2, 4)
            Hx, Hxi = self.H.gradients(x, p)
            Hxx, Hxxi, Hxixi = self._hessH(x, p)
            dJx = Hxxi.T @ Jx + Hxixi @ Jp
            dJp = -Hxx @ Jx - Hxxi @ Jp
            hess = Jp @ np.linalg.inv(Jx)
            A, _ = self._rhs_matrix(x, p, hess)
            ds = A @ sig
            return np.concatenate([Hxi, -Hx, dJx.ravel(), dJp.ravel(), ds.real.ravel(), ds.imag.ravel()])

        Y0 = np.concatenate([y, xi0, np.eye(d).ravel(), np.zeros(9), sig0.real.ravel(), sig0.imag.ravel()])
        if t == 0:
            Y = Y0
        else:
            sol = integrate.solve_ivp(rhs, (0.0, t), Y0, method="DOP853", rtol=rtol, atol=rtol)
            if not sol.success:
                raise ParametrixError(sol.message)
            Y = sol.y[:, -1]
        x = Y[:d]
        p = Y[d:2 * d]
        sig = (Y[2 * d + 18:2 * d + 26] + 1j * Y[2 * d + 26:]).reshape(2, 4)
        P = np.array([*self.H._p(x, p), float(self.H._p4(x)), 0.0])
        P[4] = -self.H.s * math.sqrt(float(P[:4] @ P[:4]))
        r1, r2 = _rvec(P, self.H.s)
        E = np.outer(r1, sig[0]) + np.outer(r2, sig[1])
        return E, x

    def E0(self, t, x):
        y = self.phase.foot(t, np.asarray(x, float))
        E, _ = self.along(y, t)
        return E


def transport_leading(branch, xi, patch: Patch, t_window: float, fields: FieldConfig, phys: PhysicalConfig, **kw) -> TransportAmplitude:
    phase = eikonal_phase(branch, xi, patch, t_window, fields, phys, **kw)
    return TransportAmplitude(phase, fields, phys)


def transport_residual(amp: TransportAmplitude, t: float, x, step: float = 1e-3) -> float:
    """max_k |l_k L(E_0)| at (t, x) from finite differences of E_0, relative to |E_0|."""
    x = np.asarray(x, dtype=float)
    f = lambda tt, xx: amp.E0(tt, xx)
    c5 = lambda g: (-g(2) + 8 * g(1) - 8 * g(-1) + g(-2)) / (12 * step)
    dE_t = c5(lambda k: f(t + k * step, x))
    L = dE_t.copy()
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        L = L + amp.phys.c * amp.mset.alpha[j] @ c5(lambda k: f(t, x + k * e))
    grad = amp.phase.grad(t, x)
    p = amp.H._p(x, grad)
    p4 = float(amp.H._p4(x))
    P = PVector(*p, p4, -amp.H.s * math.sqrt(float(p @ p) + p4 * p4))
    _, _, l1, l2 = null_eigenvectors(P, amp.H.s)
    E = f(t, x)
    scale = max(1.0, float(np.abs(E).max())) * max(1.0, float(np.linalg.norm(l1)))
    return float(max(np.abs(l1 @ L).max(), np.abs(l2 @ L).max())) / scale


# ---------------------------------------------------------------------------
# Reduced one-dimensional model
# ---------------------------------------------------------------------------

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)

@dataclass(frozen=True)
class ReducedModel:
    """H = c sigma_1 (h/i) d/dx + mc^2 sigma_3 + e v(x) on a periodic interval.

    ``v0`` and ``width`` define v(x) = v0 exp(-(x/width)^2); v0 = 0 gives the
    free model.  Probes are Gaussian packets with centers ``probe_x``, momenta
    ``probe_xi`` and both spinor components.  The default probes start at the
    critical point of v, where the inter-branch part of the leading remainder
    vanishes at t = 0; elsewhere that part oscillates like exp(2i mc^2 t/h)
    and makes error ratios between neighbouring h noisy.
    """

    v0: float = 1.0
    width: float = 1.0
    m: float = 1.0
    c: float = 1.0
    e: float = -1.0
    L: float = 12.0
    t: float = 0.3
    probe_x: tuple = (0.0,)
    probe_xi: tuple = (0.8, -0.6)
    points_per_wavelength: float = 4.0
    steps_per_unit_time: int = 400
    flow_steps_per_unit_time: int = 100
    mode_cut: float = 1e-10

    def v(self, x):
        return self.v0 * np.exp(-((np.asarray(x) / self.width) ** 2))

    def dv(self, x):
        x = np.asarray(x)
        return -2 * x / self.width**2 * self.v(x)

    def hamiltonian(self, sign: int) -> BranchHamiltonian:
        e, mc2 = self.e, self.m * self.c**2
        return BranchHamiltonian(
            sign,
            1,
            self.c,
            e,
            lambda x: e * self.v(x[..., 0]),
            lambda x: mc2 + 0.0 * x[..., 0],
            lambda x: (e * self.dv(x[..., 0]))[..., None],
            lambda x: np.zeros_like(x),
        )


def _grid(model: ReducedModel, h: float):
    pmax = max(abs(np.asarray(model.probe_xi))) + 10 * math.sqrt(h) + abs(model.e * model.v0) / model.c + 1.0
    n = int(2 ** math.ceil(math.log2(model.points_per_wavelength * model.L * pmax / (2 * math.pi * h))))
    n = max(n, 256)
    x = (np.arange(n) - n // 2) * (model.L / n)
    xi = 2 * math.pi * h * np.fft.fftfreq(n, d=model.L / n)
    return x, xi


def _probes(model: ReducedModel, h: float, x):
    out = []
    for x0 in model.probe_x:
        for x1 in model.probe_xi:
            g = (math.pi * h) ** -0.25 * np.exp(-((x - x0) ** 2) / (2 * h) + 1j * x1 * x / h)
            for comp in (0, 1):
                f = np.zeros((2, x.size), dtype=complex)
                f[comp] = g
                out.append(f)
    return out


def reference_propagator(model: ReducedModel, h: float, f: np.ndarray, steps_per_unit: Optional[int] = None) -> np.ndarray:
    """Strang splitting exp(-i dt V/2h) exp(-i dt H0/h) exp(-i dt V/2h), exact in each factor."""
    x, xi = _grid(model, h)
    spu = steps_per_unit or model.steps_per_unit_time
    n = max(1, int(math.ceil(abs(model.t) * spu / h**0.5)))
    dt = model.t / n
    mc2 = model.m * model.c**2
    E = np.sqrt((model.c * xi) ** 2 + mc2**2)
    S = model.c * xi[:, None, None] * SIGMA1 + mc2 * SIGMA3
    # exp(-i dt S/h) = cos(dt E/h) - i sin(dt E/h) S/E
    U0 = np.cos(dt * E / h)[:, None, None] * np.eye(2) - 1j * (np.sin(dt * E / h) / E)[:, None, None] * S
    half = np.exp(-0.5j * dt * model.e * model.v(x) / h)
    g = f.copy()
    for _ in range(n):
        g = g * half
        G = np.fft.fft(g, axis=1)
        G = np.einsum("kab,bk->ak", U0, G)
        g = np.fft.ifft(G, axis=1)
        g = g * half
    return g


def _rvec1(sign, q1, q4, q5):
    """Right null vector of q5 + q1 sigma_1 + q4 sigma_3 on the given branch."""
    if sign > 0:
        return np.stack([q4 - q5, q1])
    return np.stack([q1, -(q4 + q5)])


def _fio_kernel(model: ReducedModel, h: float, sign: int, x, xi_grid):
    """Kernel (B, r0) of one branch: U^s f = L^-1 sum_k B[:, k, :] (r0[:, k] . F_k).

    The amplitude is E_0 = r(t) sigma(t) r0^T with sigma(0) = 1/(r0 . r0);
    sigma follows d log sigma/dt = -(l L r)/(l r) along each characteristic.
    """
    H = model.hamiltonian(sign)
    c = model.c
    mc2 = model.m * c**2
    nflow = max(8, int(math.ceil(abs(model.t) * model.flow_steps_per_unit_time)))
    nflow += nflow % 2
    dt = model.t / nflow
    dy = x[1] - x[0]
    Y = np.broadcast_to(x[None, :, None], (xi_grid.size, x.size, 1)).copy()
    Pm = np.broadcast_to(xi_grid[:, None, None], Y.shape).copy()
    S = np.zeros(Y.shape[:-1])

    def d_dy(a):
        # fourth-order periodic centered difference
        return (8 * (np.roll(a, -1, 1) - np.roll(a, 1, 1)) - (np.roll(a, -2, 1) - np.roll(a, 2, 1))) / (12 * dy)

    def rate(Xs, Ps):
        Jx = d_dy(Xs[..., 0] - x[None, :]) + 1.0
        hess = d_dy(Ps[..., 0]) / Jx
        q1 = c * Ps[..., 0]
        root = np.sqrt(q1**2 + mc2**2)
        Hx, Hxi = H.gradients(Xs, Ps)
        dq1_x = c * hess
        dq1_t = -c * (Hx[..., 0] + Hxi[..., 0] * hess)
        zero = 0 * q1
        r = _rvec1(sign, q1, mc2 + zero, -sign * root)
        r_t = _rvec1(sign, dq1_t, zero, -sign * q1 * dq1_t / root)
        r_x = _rvec1(sign, dq1_x, zero, -sign * q1 * dq1_x / root)
        Lr = r_t + c * r_x[::-1]
        return -np.sum(r * Lr, axis=0) / np.sum(r * r, axis=0), Jx

    rates = [rate(Y, Pm)[0]]
    Xc, Pc = Y, Pm
    min_jac = np.inf
    for _ in range(nflow):
        Xc, Pc, dS = _gl4_step(H, Xc, Pc, dt, tol=1e-14)
        S = S + dS
        rt, Jx = rate(Xc, Pc)
        min_jac = min(min_jac, float(np.min(np.abs(Jx))))
        rates.append(rt)
    if min_jac < 1.0 / CAUSTIC_COND:
        raise ParametrixError("caustic inside the time window of the reduced model")
    w = np.ones(nflow + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    logsig = dt / 3 * np.tensordot(w, np.array(rates), axes=1)
    q1 = c * xi_grid
    r0 = _rvec1(sign, q1, mc2 + 0 * q1, -sign * np.sqrt(q1**2 + mc2**2))
    q1e = c * Pc[..., 0]
    re = _rvec1(sign, q1e, mc2 + 0 * q1e, -sign * np.sqrt(q1e**2 + mc2**2))
    amp = re * (np.exp(logsig) / np.sum(r0 * r0, axis=0)[:, None])[None]
    Xend = Xc[..., 0]
    # (y xi + S - x(t; y) xi)/h varies slowly and is periodic since xi lies on the FFT grid
    psi = (x[None, :] * xi_grid[:, None] + S - Xend * xi_grid[:, None]) / h
    B = np.empty((2, xi_grid.size, x.size), dtype=complex)
    x0, L = x[0], model.L
    for k in range(xi_grid.size):
        xe = (Xend[k] - x0) % L + x0
        order = np.argsort(xe)
        xs = np.append(xe[order], xe[order][0] + L)
        cs_p = CubicSpline(xs, np.append(psi[k][order], psi[k][order][0]), bc_type="periodic")
        ak = np.concatenate([amp[:, k][:, order], amp[:, k][:, order[:1]]], axis=1)
        cs_a = CubicSpline(xs, ak, axis=1, bc_type="periodic")
        xq = np.where(x < xs[0], x + L, x)
        B[:, k] = cs_a(xq) * np.exp(1j * (cs_p(xq) + x * xi_grid[k] / h))[None]
    return B, r0


def _fourier(model: ReducedModel, h: float, f: np.ndarray):
    """F(xi) = int e^{-i x xi/h} f(x) dx on the periodic grid."""
    x, xi = _grid(model, h)
    return np.fft.fft(f, axis=1) * (model.L / x.size) * np.exp(-1j * xi * x[0] / h)[None, :]


def fio_apply(model: ReducedModel, h: float, fs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Leading-order parametrix U_t^+ + U_t^- applied to grid functions of shape (2, n)."""
    x, xi = _grid(model, h)
    Fs = [_fourier(model, h, f) for f in fs]
    mag = np.max([np.abs(F).max(axis=0) for F in Fs], axis=0)
    sel = mag > model.mode_cut * mag.max()
    outs = [np.zeros((2, x.size), dtype=complex) for _ in fs]
    for sign in (1, -1):
        B, r0 = _fio_kernel(model, h, sign, x, xi[sel])
        for out, F in zip(outs, Fs):
            proj = np.sum(r0 * F[:, sel], axis=0)
            out += np.einsum("akx,k->ax", B, proj)
    # (2 pi h)^-1 d xi with d xi = 2 pi h / L
    return [o / model.L for o in outs]


def propagator_error(model: ReducedModel, h_list: Sequence[float]) -> list[tuple[float, float]]:
    """Largest relative L2 error of the leading-order parametrix over the probe set, per h."""
    out = []
    for h in h_list:
        x, _ = _grid(model, h)
        probes = _probes(model, h, x)
        approx = fio_apply(model, h, probes)
        worst = 0.0
        for f, a in zip(probes, approx):
            ref = reference_propagator(model, h, f)
            worst = max(worst, float(np.linalg.norm(a - ref) / np.linalg.norm(ref)))
        out.append((float(h), worst))
    return out
