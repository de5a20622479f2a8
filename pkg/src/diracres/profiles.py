"""Named radial potential profiles with complex-argument evaluators.

Each profile describes a spherically symmetric scalar potential v(r); the
potential energy felt by the particle is e*v.  With the default charge
e = -1 a positive amplitude ``v0`` produces an attractive well.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dirac_core import FieldConfig


@dataclass(frozen=True)
class RadialProfile:
    """A radial potential v(r) usable at complex radii.

    Attributes
    ----------
    value : callable
        v(r) for real or complex arrays.
    derivative : callable
        dv/dr for real arrays.
    breakpoints : tuple of float
        Radii where v is not smooth; discretizations place element edges there.
    support : float
        Radius beyond which |v| is below ``tail_tol`` (exactly zero for
        compactly supported profiles).
    """

    name: str
    value: Callable
    derivative: Callable
    breakpoints: tuple = ()
    support: float = np.inf
    amplitude: float = 0.0
    decay: float = np.inf
    analytic_radius: float = np.inf


def gaussian_well(v0: float, width: float = 1.0, tail_tol: float = 1e-16) -> RadialProfile:
    """v(r) = v0 exp(-(r/width)^2); entire in r."""

    def value(r):
        return v0 * np.exp(-((np.asarray(r) / width) ** 2))

    def derivative(r):
        r = np.asarray(r)
        return -2.0 * r / width**2 * value(r)

    support = width * np.sqrt(max(np.log(max(abs(v0), 1e-300) / tail_tol), 1.0))
    return RadialProfile("gaussian-well", value, derivative, (), support, v0, np.inf, np.inf)


def square_well(v0: float, radius: float) -> RadialProfile:
    """v(r) = v0 on r < radius, 0 outside.

    At complex radii the profile is evaluated through Re r, which is exact for
    any distortion that only moves points beyond ``radius``.
    """

    def value(r):
        r = np.asarray(r)
        out = np.where(np.real(r) < radius, v0, 0.0)
        return out.astype(complex) if np.iscomplexobj(r) else out.astype(float)

    def derivative(r):
        return np.zeros_like(np.asarray(r, dtype=float))

    return RadialProfile("square-well", value, derivative, (float(radius),), float(radius), v0, np.inf, np.inf)


def rational_decay(v0: float, width: float = 1.0, power: float = 4.0) -> RadialProfile:
    """Yukawa-like rational decay v(r) = v0 (1 + (r/width)^2)^(-power/2).

    Analytic in the strip |Im r| < width, so complex distortions must keep
    the rotated path inside that strip near the origin.
    """

    def value(r):
        r = np.asarray(r)
        return v0 * (1.0 + (r / width) ** 2) ** (-0.5 * power)

    def derivative(r):
        r = np.asarray(r)
        return -power * r / width**2 * v0 * (1.0 + (r / width) ** 2) ** (-0.5 * power - 1.0)

    support = width * (abs(v0) / 1e-16) ** (1.0 / power) if v0 else 0.0
    return RadialProfile("rational-decay", value, derivative, (), support, v0, power, width)


PROFILES = {
    "gaussian-well": gaussian_well,
    "square-well": square_well,
    "rational-decay": rational_decay,
    "yukawa-like": rational_decay,
}


def _radius(x):
    x = np.asarray(x)
    # Bilinear (non-conjugated) square keeps the evaluator analytic in x.
    return np.sqrt(np.sum(x * x, axis=-1))


def spherical_fields(profile: RadialProfile) -> FieldConfig:
    """FieldConfig with v+ = v- = v(|x|) and no vector potential."""

    def v(x):
        return profile.value(_radius(x))

    return FieldConfig(
        v_plus=v,
        v_minus=v,
        A=None,
        delta=profile.decay,
        R0=profile.analytic_radius,
        radial=profile,
        name=profile.name,
        params={"v0": profile.amplitude},
    )


def make_fields(name: str, **params) -> FieldConfig:
    """Build a FieldConfig from a named profile; ``"free"`` yields no potential."""
    if name == "free":
        return FieldConfig()
    try:
        factory = PROFILES[name]
    except KeyError as exc:
        raise KeyError(f"unknown profile {name!r}; known: {sorted(PROFILES)}") from exc
    fc = spherical_fields(factory(**params))
    return FieldConfig(
        v_plus=fc.v_plus,
        v_minus=fc.v_minus,
        A=None,
        delta=fc.delta,
        R0=fc.R0,
        radial=fc.radial,
        name=name,
        params=dict(params),
    )


def radial_potential_energy(fields: FieldConfig, e: float) -> Callable:
    """Return r -> e*v(r) for a spherically symmetric field configuration."""
    if fields.radial is None:
        return lambda r: np.zeros_like(np.asarray(r), dtype=complex if np.iscomplexobj(r) else float)
    prof = fields.radial
    return lambda r: e * prof.value(r)
