import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracres.dirac_core import (
    FieldConfig,
    MassGapError,
    PhysicalConfig,
    SymbolPoint,
    anticommutator_defect,
    branch_energy,
    charge_conjugation_matrix,
    conjugated_matrix_set,
    sample_mass_gap_margin,
    standard_dirac_matrices,
    symbol,
    symbol_eigenvalues,
    symbol_projections,
)
from diracres.profiles import make_fields

coord = st.floats(-4.0, 4.0, allow_nan=False)
vec3 = st.tuples(coord, coord, coord)
GAUSS = make_fields("gaussian-well", v0=0.8, width=1.0)
PHYS = PhysicalConfig()


def test_clifford_relations_hold_exactly():
    mset = standard_dirac_matrices()
    assert anticommutator_defect(mset) < 1e-15
    assert anticommutator_defect(conjugated_matrix_set(mset)) < 1e-15


def test_charge_conjugation_flips_beta_only():
    mset = standard_dirac_matrices()
    U = charge_conjugation_matrix(mset)
    Ui = np.linalg.inv(U)
    assert np.allclose(U @ U.conj().T, np.eye(4), atol=1e-15)
    for a in mset.alpha:
        assert np.allclose(U @ a.conj() @ Ui, a, atol=1e-15)
    assert np.allclose(U @ mset.beta.conj() @ Ui, -mset.beta, atol=1e-15)


def test_conjugated_set_flips_real_alphas():
    mset = standard_dirac_matrices()
    conj = conjugated_matrix_set(mset)
    for a, b in zip(mset.matrices(), conj.matrices()):
        assert np.allclose(a.conj(), b, atol=0) or np.allclose(a.conj(), -b, atol=0)
    assert np.allclose(conj.alpha[0], -mset.alpha[0])
    assert np.allclose(conj.alpha[1], mset.alpha[1])


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(h=1.5), dict(m=-1.0), dict(c=0.0), dict(e=1.0)])
def test_physical_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        PhysicalConfig(**kw)


@given(vec3, vec3, st.sampled_from([0, 1]))
def test_closed_form_eigenvalues_match_numerical(x, xi, nu):
    p = SymbolPoint(x, xi)
    D = symbol(nu, p, GAUSS, PHYS)
    numeric = np.linalg.eigvalsh(D)
    hp, hm = symbol_eigenvalues(nu, p, GAUSS, PHYS)
    assert np.allclose(numeric, [hm, hm, hp, hp], atol=1e-12 * max(1.0, abs(hp)))


@given(vec3, vec3, st.sampled_from([0, 1]))
def test_projections_are_spectral(x, xi, nu):
    p = SymbolPoint(x, xi)
    D = symbol(nu, p, GAUSS, PHYS)
    Pp, Pm = symbol_projections(nu, p, GAUSS, PHYS)
    hp, hm = symbol_eigenvalues(nu, p, GAUSS, PHYS)
    I = np.eye(4)
    assert np.abs(Pp @ Pp - Pp).max() < 1e-13
    assert np.abs(Pp + Pm - I).max() < 1e-13
    assert np.abs(Pp @ Pm).max() < 1e-13
    assert np.abs(D @ Pp - hp * Pp).max() < 1e-12 * max(1.0, abs(hp))
    assert np.abs(D @ Pm - hm * Pm).max() < 1e-12 * max(1.0, abs(hm))
    assert np.isclose(np.trace(Pp).real, 2.0)


@given(vec3, vec3)
def test_vectorised_branches_match_pointwise(x, xi):
    hp, hm = symbol_eigenvalues(1, SymbolPoint(x, xi), GAUSS, PHYS)
    X, XI = np.array([x]), np.array([xi])
    assert np.isclose(branch_energy(1, X, XI, GAUSS, PHYS)[0], hp, rtol=1e-14, atol=1e-14)
    assert np.isclose(branch_energy(-1, X, XI, GAUSS, PHYS)[0], hm, rtol=1e-14, atol=1e-14)


def test_free_symbol_has_mass_gap():
    p = SymbolPoint([0, 0, 0], [0, 0, 0])
    assert symbol_eigenvalues(0, p, FieldConfig(), PHYS) == (1.0, -1.0)


def test_mass_gap_violation_detected():
    strong = FieldConfig(v_plus=lambda x: 5.0 + 0 * x[..., 0], v_minus=lambda x: 0 * x[..., 0], name="strong")
    with pytest.raises(MassGapError):
        symbol_eigenvalues(1, SymbolPoint([0, 0, 0], [1, 0, 0]), strong, PHYS)
    assert sample_mass_gap_margin(strong, PHYS) < 0
    assert sample_mass_gap_margin(GAUSS, PHYS) == pytest.approx(2.0)


def test_symbol_point_rejects_nonfinite():
    with pytest.raises(ValueError):
        SymbolPoint([np.nan, 0, 0], [0, 0, 0])
