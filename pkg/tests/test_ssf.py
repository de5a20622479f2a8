import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from diracres.dirac_core import FieldConfig, PhysicalConfig
from diracres.profiles import make_fields
from diracres.radial import RadialChannel
from diracres.ssf import (
    SSFError,
    breit_wigner_density,
    harmonic_measure,
    lorentzian_fit,
    mollify,
    phase_shift,
    ssf_curve,
    w_pm,
    weyl_density,
    weyl_term,
)
from oracles import composite_gauss, square_well_phase_mod_pi, wrap_pi

PHYS = PhysicalConfig()
WELL = make_fields("square-well", v0=3.0, radius=2.0)
GAUSS = make_fields("gaussian-well", v0=4.0, width=1.0)


@pytest.mark.parametrize("kappa", [-2, -1, 1, 3])
@pytest.mark.parametrize("lam", [1.1, 1.7, 2.6, -1.4, -2.2])
def test_phase_shift_matches_matching_oracle_mod_pi(kappa, lam):
    delta = phase_shift(RadialChannel(kappa), lam, WELL, PHYS)
    ref = square_well_phase_mod_pi(lam, -3.0, 2.0, kappa)
    assert abs(wrap_pi(delta - ref)) < 1e-8


def test_free_phase_shift_vanishes_and_threshold_rejected():
    assert phase_shift(RadialChannel(1), 1.5, FieldConfig(), PHYS) == 0.0
    with pytest.raises(SSFError):
        phase_shift(RadialChannel(1), 0.5, WELL, PHYS)


def test_phase_shift_independent_of_matching_radius():
    ch = RadialChannel(-2)
    a = phase_shift(ch, 1.8, WELL, PHYS, r_match=3.0)
    b = phase_shift(ch, 1.8, WELL, PHYS, r_match=9.0)
    assert a == pytest.approx(b, abs=1e-9)
    with pytest.raises(SSFError):
        phase_shift(ch, 1.8, WELL, PHYS, r_match=1.0)


def test_ssf_curve_continuity_and_gap_steps():
    lam = np.array([-1.6, -1.3, -0.9, -0.5, 0.0, 0.5, 0.9, 1.3, 1.6])
    curve = ssf_curve(lam, 1.0, WELL, PHYS)
    assert curve.gap_eigenvalues
    # inside the gap xi is a step function counting bound states
    gap = np.abs(lam) < 1
    inc = np.diff(curve.xi[gap])
    assert np.all(inc >= -1e-12)
    assert np.allclose(inc, np.round(inc), atol=1e-9)
    n_bound = sum(2 * abs(k) for v, k in curve.gap_eigenvalues)
    assert curve.xi[gap][-1] - curve.xi[gap][0] <= n_bound


@pytest.mark.filterwarnings("ignore:kappa_max")
def test_ssf_curve_workers_do_not_change_result():
    lam = np.linspace(1.1, 2.5, 8)
    a = ssf_curve(lam, 1.0, WELL, PHYS, workers=1)
    b = ssf_curve(lam, 1.0, WELL, PHYS, workers=3)
    assert np.array_equal(a.xi, b.xi)


def test_ssf_rejects_bad_grids():
    with pytest.raises(SSFError):
        ssf_curve([1.5, 1.2], 1.0, WELL, PHYS)
    with pytest.raises(SSFError):
        ssf_curve([0.5, 1.0], 1.0, WELL, PHYS)


def test_mollify_preserves_constants_and_mass():
    x = np.ones(50)
    assert np.allclose(mollify(x, 3.0), 1.0)
    spike = np.zeros(101)
    spike[50] = 1.0
    assert mollify(spike, 4.0).sum() == pytest.approx(1.0)
    assert np.array_equal(mollify(spike, 0.0), spike)


@given(st.floats(1.2, 6.0), st.floats(-1.5, 1.5))
def test_w_pm_reduces_to_free_for_zero_potential(lam, v):
    Wp, Wm = w_pm(lam, 0.0, 0.0, PHYS)
    assert float(Wp) == pytest.approx((lam**2 - 1.0) ** 1.5)
    assert float(Wm) == 0.0
    Wp2, _ = w_pm(lam, v, v, PHYS)
    # a constant potential energy ev shifts the energy: lam -> lam - e v
    assert float(Wp2) == pytest.approx(max((lam + v) ** 2 - 1.0, 0.0) ** 1.5 if lam + v > 0 else 0.0, abs=1e-12)


@pytest.mark.parametrize("lam, lam1", [(0.5, -0.5), (1.8, 1.2), (-1.3, -2.0)])
def test_weyl_term_matches_refined_quadrature(lam, lam1):
    prof = GAUSS.radial

    def dens(E):
        def f(r):
            v = np.real(prof.value(r))
            Wp, Wm = w_pm(E, v, v, PHYS)
            Wp0, Wm0 = w_pm(E, 0.0, 0.0, PHYS)
            return r * r * ((Wp - Wp0) - (Wm - Wm0))

        edges = np.linspace(0.0, 9.0, 361)
        return 4 * math.pi * composite_gauss(f, edges, n=40) / (3 * math.pi**2)

    w = weyl_term(lam, lam1, GAUSS, PHYS)
    assert w.value == pytest.approx(dens(lam) - dens(lam1), rel=1e-8)


def test_weyl_density_scales_with_c_cubed():
    slow = PhysicalConfig(c=2.0, m=0.25)  # same mc^2
    a, _ = weyl_density(0.5, GAUSS, PHYS)
    b, _ = weyl_density(0.5, GAUSS, slow)
    # W_pm depend on c only through mc^2, so the prefactor 1/c^3 is the whole difference
    assert b == pytest.approx(a / 8.0, rel=1e-10)


def test_weyl_term_rejects_straddling_thresholds():
    with pytest.raises(SSFError):
        weyl_term(1.5, 0.5, GAUSS, PHYS)


@given(st.floats(-3, 3), st.floats(0.01, 2.0), st.floats(-3, 3), st.floats(0.01, 3))
def test_harmonic_measure_is_poisson_integral(re, g, a, width):
    w = complex(re, -g)
    b = a + width
    ref, _ = integrate.quad(lambda x: g / (math.pi * ((x - re) ** 2 + g * g)), a, b, epsabs=1e-13, epsrel=1e-12)
    assert harmonic_measure(w, a, b) == pytest.approx(ref, abs=1e-10)


def test_breit_wigner_density_integrates_to_degeneracy():
    lam = np.linspace(-200, 200, 400001)
    dens = np.asarray(breit_wigner_density([1.0 - 0.05j], lam))
    assert np.trapezoid(dens, lam) == pytest.approx(1.0, rel=1e-3)


@given(st.floats(1.2, 2.5), st.floats(0.005, 0.05), st.floats(-0.5, 0.5), st.integers(1, 6))
def test_lorentzian_fit_recovers_synthetic_pole(re, g, slope, deg):
    lams = np.linspace(re - 20 * g, re + 20 * g, 401)
    vals = deg * g / (math.pi * ((lams - re) ** 2 + g * g)) + 0.3 + slope * (lams - re)
    fit = lorentzian_fit(lams, vals, degeneracy=deg)
    assert fit.re_w == pytest.approx(re, abs=1e-8 * g + 1e-12)
    assert fit.im_w == pytest.approx(-g, rel=1e-7)
    assert not fit.ill_conditioned


def test_lorentzian_fit_needs_enough_samples():
    with pytest.raises(SSFError):
        lorentzian_fit(np.linspace(0, 1, 10), np.ones(10))
