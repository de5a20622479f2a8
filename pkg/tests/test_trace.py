import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracres.dirac_core import FieldConfig, PhysicalConfig
from diracres.profiles import make_fields
from diracres.trace import (
    SmoothingSpec,
    TraceError,
    bump_function,
    gamma0,
    gamma0_from_weyl,
    noncritical_check,
    numerical_trace_difference,
    smooth_plateau,
    smoothing_kernel,
)

PHYS = PhysicalConfig()
GAUSS = make_fields("gaussian-well", v0=4.0, width=1.0)


@pytest.mark.parametrize("window, profile", [(1.0, "bump"), (2.0, "bump-conv"), (0.5, "bump")])
def test_smoothing_kernel_is_a_probability_density(window, profile):
    spec = SmoothingSpec(window, profile)
    assert float(spec.theta(0.0)) == pytest.approx(1.0)
    assert float(spec.theta(1.01 * window)) == 0.0
    h = 0.1
    lam = np.linspace(-400.0, 400.0, 160001)
    k = smoothing_kernel(spec, h, lam)
    assert np.trapezoid(k, lam) == pytest.approx(1.0, abs=1e-10)
    if spec.resolved_profile == "bump-conv":
        assert k.min() >= 0.0


def test_theta_hat_is_transform_of_theta():
    spec = SmoothingSpec(1.5, "bump-conv")
    t = np.linspace(-1.5, 1.5, 3001)
    th = spec.theta(t)
    for lam in (0.0, 1.3, 4.0):
        direct = np.trapezoid(th * np.cos(lam * t), t)
        assert float(spec.theta_hat(lam)) == pytest.approx(direct, abs=1e-6)


def test_smoothing_spec_validation():
    with pytest.raises(TraceError):
        SmoothingSpec(0.0)
    with pytest.raises(TraceError):
        SmoothingSpec(1.0, "gaussian")


@given(st.floats(-0.95, 0.95))
def test_bump_derivative_matches_finite_difference(s):
    phi = bump_function(-0.8, 0.6, height=2.0)
    x = -0.1 + 0.7 * s
    step = 1e-6
    fd = (phi(x + step) - phi(x - step)) / (2 * step)
    assert fd == pytest.approx(float(phi.derivative(np.array(x))), abs=1e-6)


def test_test_function_support_checks():
    with pytest.raises(TraceError):
        bump_function(0.5, 1.5).check(PHYS)
    with pytest.raises(TraceError):
        smooth_plateau(0.0, 1.0, 0.6)
    plateau = smooth_plateau(1.2, 2.2, 0.2)
    assert float(plateau(1.7)) == 1.0
    assert float(plateau(1.2)) == 0.0


@pytest.mark.parametrize("a, b", [(-0.8, 0.6), (1.2, 2.0), (-2.5, -1.3)])
def test_gamma0_two_routes_agree(a, b):
    phi = bump_function(a, b)
    assert gamma0(phi, GAUSS, PHYS) == pytest.approx(gamma0_from_weyl(phi, GAUSS, PHYS), rel=1e-9)


def test_gamma0_of_free_operator_is_zero():
    assert gamma0(bump_function(1.2, 2.0), FieldConfig(), PHYS) == 0.0
    assert numerical_trace_difference(bump_function(1.2, 2.0), 0.5, FieldConfig(), PHYS).value == 0.0


def test_trace_difference_independent_of_workers():
    phi = bump_function(-0.8, 0.6)
    a = numerical_trace_difference(phi, 0.5, GAUSS, PHYS, workers=1)
    b = numerical_trace_difference(phi, 0.5, GAUSS, PHYS, workers=2)
    assert a.value == b.value
    assert a.per_channel == b.per_channel
    assert a.kappa_max >= 1


def test_gap_trace_counts_bound_states():
    # in the gap phi = 1 on the window turns the trace into a bound-state count
    phi = smooth_plateau(-0.95, 0.95, 0.02)
    tr = numerical_trace_difference(phi, 0.5, GAUSS, PHYS)
    assert tr.value == pytest.approx(round(tr.value), abs=1e-6)
    assert tr.value > 0


def test_noncritical_levels():
    # the bottom of the well, lam = mc^2 + e v0 at x = xi = 0, is critical
    assert not noncritical_check(-3.0, GAUSS, PHYS)
    rep = noncritical_check(0.0, GAUSS, PHYS)
    assert rep and rep.margin == pytest.approx(math.sqrt(15) / 4, rel=1e-6)


@given(st.floats(1.19, 2.01))
def test_plateau_derivative_matches_finite_difference(x):
    phi = smooth_plateau(1.2, 2.0, 0.2)
    step = 1e-6
    fd = (phi(x + step) - phi(x - step)) / (2 * step)
    assert fd == pytest.approx(float(phi.derivative(np.array(x))), abs=1e-5)
