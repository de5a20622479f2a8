import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracres.dirac_core import FieldConfig, PhysicalConfig
from diracres.distortion import ScalingSpec
from diracres.profiles import PROFILES, make_fields
from diracres.radial import (
    CAP,
    ComplexScaling,
    RadialChannel,
    RadialGrid,
    RadialModelError,
    assemble_channel_operator,
    channel_list,
    interaction_radius,
    validate_radial_fields,
)
from oracles import jost_root

PHYS = PhysicalConfig()
WELL = make_fields("square-well", v0=3.0, radius=2.0)
GRID = RadialGrid(r_max=40.0, N=200, degree=8)

# Bound state of the kappa=-1 channel of the benchmark well, frozen from the matching oracle.
BOUND_KM1 = 0.05799861545598457


def test_profiles_are_registered():
    assert {"gaussian-well", "square-well"} <= set(PROFILES)
    with pytest.raises(KeyError):
        make_fields("no-such-profile")
    assert make_fields("free").is_free


@given(st.floats(0.01, 6.0))
def test_gaussian_derivative_matches_finite_difference(r):
    prof = make_fields("gaussian-well", v0=2.0, width=1.3).radial
    step = 1e-6
    fd = (prof.value(r + step) - prof.value(r - step)) / (2 * step)
    assert fd == pytest.approx(float(prof.derivative(r)), abs=1e-8)


def test_square_well_profile_and_breakpoint():
    prof = WELL.radial
    assert float(prof.value(1.0)) == 3.0
    assert float(prof.value(2.5)) == 0.0
    assert 2.0 in prof.breakpoints
    assert interaction_radius(WELL, PHYS) == pytest.approx(2.0)


def test_channel_validation_and_degeneracy():
    with pytest.raises(RadialModelError):
        RadialChannel(0)
    assert RadialChannel(-3).degeneracy == 6


def test_channel_list_comes_in_pairs():
    chans = channel_list(1.0, (1.2, 2.5), WELL, PHYS)
    kappas = [c.kappa for c in chans]
    assert set(kappas) == {k for m in range(1, max(kappas) + 1) for k in (-m, m)}
    # higher energies and smaller h reach more channels
    assert len(channel_list(0.5, (1.2, 2.5), WELL, PHYS)) > len(chans)


def test_undistorted_operator_is_real_symmetric():
    op = assemble_channel_operator(RadialChannel(2), None, GRID, WELL, PHYS)
    assert op.hermitian_defect() < 1e-13
    assert op.symmetry_defect() < 1e-13
    assert op.n_c == op.n_d


def test_scaled_operator_is_complex_symmetric_not_hermitian():
    method = ComplexScaling(0.3j, ScalingSpec(2.5, 7.5))
    op = assemble_channel_operator(RadialChannel(-2), method, GRID, WELL, PHYS)
    assert op.symmetry_defect() < 1e-13
    assert op.hermitian_defect() > 1e-3


@pytest.mark.parametrize("kappa", [-1, 1])
def test_bound_state_matches_matching_oracle(kappa):
    grid = RadialGrid(r_max=40.0, N=240, degree=10)
    op = assemble_channel_operator(RadialChannel(kappa), None, grid, WELL, PHYS)
    ev = np.linalg.eigvalsh(op.dense().real)
    gap = ev[np.abs(ev) < 1.0]
    for e in gap:
        ref = jost_root(e, -3.0, 2.0, kappa)
        assert abs(ref.imag) < 1e-12
        assert e == pytest.approx(ref.real, abs=1e-9)
    if kappa == -1:
        assert np.min(np.abs(gap - BOUND_KM1)) < 1e-9


def test_free_spectrum_has_no_gap_states():
    op = assemble_channel_operator(RadialChannel(-1), None, GRID, FieldConfig(), PHYS)
    ev = np.linalg.eigvalsh(op.dense().real)
    assert np.all(np.abs(ev) > PHYS.mc2)


def test_kappa_sign_symmetry():
    # h_kappa(V) = -P h_{-kappa}(-V) P: spectra are negatives of each other
    neg = make_fields("square-well", v0=-3.0, radius=2.0)
    a = np.linalg.eigvalsh(assemble_channel_operator(RadialChannel(2), None, GRID, WELL, PHYS).dense().real)
    b = np.linalg.eigvalsh(assemble_channel_operator(RadialChannel(-2), None, GRID, neg, PHYS).dense().real)
    assert np.allclose(np.sort(a), np.sort(-b), atol=1e-10)


def test_cap_makes_spectrum_dissipative():
    op = assemble_channel_operator(RadialChannel(1), CAP(alpha0=20.0, strength=1.0), GRID, WELL, PHYS)
    ev = np.linalg.eigvals(op.dense())
    pos = ev[ev.real > PHYS.mc2]
    assert np.all(pos.imag <= 1e-10)


def test_invalid_scaling_configuration():
    with pytest.raises(RadialModelError):
        assemble_channel_operator(RadialChannel(1), ComplexScaling(0.3j, ScalingSpec(1.5, 7.5)), GRID, WELL, PHYS)
    with pytest.raises(RadialModelError):
        assemble_channel_operator(RadialChannel(1), ComplexScaling(0.3j, ScalingSpec(2.5, 50.0)), GRID, WELL, PHYS)


def test_grid_edges_include_breakpoints_and_grade():
    g = RadialGrid(r_max=60.0, N=128, degree=8, breakpoints=(2.0,), stretch=1.2, max_stretch=3.0)
    edges = g.edges((7.5,))
    assert edges[0] == 0.0 and edges[-1] == 60.0
    assert 2.0 in edges and 7.5 in edges
    steps = np.diff(edges)
    assert steps.max() <= 3.0 * g.base_length + 1e-9
    assert np.all(steps > 0)


def test_validate_reports_decay_and_gap():
    rep = validate_radial_fields(WELL, PHYS)
    assert rep["accepted"] and rep["delta_hat"] == math.inf
    assert rep["mass_gap_margin"] == pytest.approx(2.0)
    slow = make_fields("rational-decay", v0=0.5, width=1.0, power=2.0)
    assert validate_radial_fields(slow, PHYS)["warnings"]
    assert "free" in validate_radial_fields(FieldConfig(), PHYS)["reason"]


def test_validate_rejects_non_scalar_fields():
    split = FieldConfig(v_plus=lambda x: np.exp(-np.sum(x * x, -1)), v_minus=lambda x: 0 * x[..., 0], name="split")
    with pytest.raises(RadialModelError):
        validate_radial_fields(split, PHYS)
