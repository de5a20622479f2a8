import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracres.dirac_core import PhysicalConfig
from diracres.distortion import ScalingSpec
from diracres.profiles import make_fields
from diracres.radial import ComplexScaling, RadialChannel, RadialGrid, assemble_channel_operator
from diracres.resonances import (
    RegionError,
    RegionQuery,
    Resonance,
    SolverError,
    channel_resonances,
    cluster_eigenvalues,
    count_in_disk,
    count_in_region,
    filter_resonances,
    merge_resonances,
    solve_spectrum,
    write_csv,
)
from oracles import jost_root

PHYS = PhysicalConfig()
WELL = make_fields("square-well", v0=3.0, radius=2.0)
SPEC = ScalingSpec(2.5, 7.5)
BENCH_GRID = RadialGrid(r_max=120.0, N=400, degree=12, stretch=1.15, max_stretch=3.0)


def test_filter_keeps_only_theta_stable_points():
    stable = np.array([1.5 - 0.03j, 2.0 - 0.08j])
    rng = np.random.default_rng(1)
    moving = 1.2 + rng.uniform(0, 3, 40) - 1j * rng.uniform(0.1, 1, 40)
    a = np.concatenate([stable, moving])
    b = np.concatenate([stable + 1e-9, moving * np.exp(-0.05j)])
    res = filter_resonances(a, 0.3j, b, 0.35j, tol=1e-7, kappa=-2)
    assert [r.z for r in res] == pytest.approx(list(stable), abs=1e-12)
    assert all(r.degeneracy == 4 and r.kappa == -2 for r in res)
    assert max(r.theta_residual for r in res) == pytest.approx(1e-9, rel=1e-3)


def test_filter_requires_distinct_thetas():
    with pytest.raises(ValueError):
        filter_resonances([1.0], 0.3j, [1.0], 0.3j, 1e-6)


def test_clusters_merge_near_points():
    out = cluster_eigenvalues([1.0, 1.0 + 1e-12, 2.0], radius=1e-9)
    assert out == [(pytest.approx(1.0 + 5e-13), 2), (2.0, 1)]


def test_region_sides_and_validation():
    assert RegionQuery(1.2, 2.5, -0.1, 0.0).side(PHYS) == "positive"
    assert RegionQuery(-2.5, -1.2, 0.0, 0.1).side(PHYS) == "negative"
    assert RegionQuery(-0.5, 0.5, -0.05, 0.05).side(PHYS) == "gap"
    with pytest.raises(RegionError):
        RegionQuery(0.5, 1.5, -0.1, 0.0).side(PHYS)
    with pytest.raises(RegionError):
        RegionQuery(2.0, 1.0, 0.0, 0.0)
    RegionQuery(1.2, 2.5, -0.1, 0.0).validate(0.3j, PHYS)
    with pytest.raises(RegionError):
        RegionQuery(1.05, 2.5, -0.1, 0.0).validate(0.3j, PHYS)


def _res(z, kappa=1):
    return Resonance(complex(z), kappa, 2 * abs(kappa), 0.0)


def test_counts_are_degeneracy_weighted():
    res = [_res(1.5 - 0.01j, 1), _res(1.6 - 0.02j, -3), _res(3.0 - 0.01j, 2)]
    q = RegionQuery(1.2, 2.0, -0.05, 0.0)
    assert count_in_region(res, q) == 2 + 6
    assert count_in_disk(res, 1.55, 0.1) == 8
    assert count_in_disk(res, 1.55, 0.0) == 0
    with pytest.warns(UserWarning):
        count_in_disk(res, 1.55, 1e-4, h=0.1)


@given(st.lists(st.complex_numbers(max_magnitude=3.0), min_size=1, max_size=30), st.floats(0.0, 2.0))
def test_disk_count_is_monotone_in_radius(zs, rho):
    res = [_res(z) for z in zs]
    assert count_in_disk(res, 0.0, rho) <= count_in_disk(res, 0.0, rho + 0.5)


def test_shift_invert_matches_dense():
    op = assemble_channel_operator(RadialChannel(3), ComplexScaling(0.3j, SPEC), RadialGrid(r_max=60, N=200, degree=8), WELL, PHYS)
    dense = solve_spectrum(op, cap=10**6, center=1.6 - 0.05j, radius=0.2)
    sparse = solve_spectrum(op, cap=0, center=1.6 - 0.05j, radius=0.2)
    assert dense.size == sparse.size > 0
    assert np.allclose(dense, sparse, atol=1e-9)
    with pytest.raises(SolverError):
        solve_spectrum(op, cap=0)


def test_merge_order_is_deterministic():
    a = [_res(2.0, 1), _res(1.0, -1), _res(1.5, 1)]

    class R:
        def __init__(self, rs):
            self.resonances = tuple(rs)

    merged = merge_resonances([R(a[:1]), R(a[1:])])
    assert [(r.kappa, r.z.real) for r in merged] == [(-1, 1.0), (1, 1.5), (1, 2.0)]


@pytest.mark.parametrize("kappa, guess", [(3, 1.48629 - 0.03770j), (-3, 1.22435 - 0.01791j)])
def test_square_well_resonance_matches_matching_oracle(kappa, guess):
    q = RegionQuery(1.2, 1.8, -0.1, 0.0)
    cr = channel_resonances(RadialChannel(kappa), (0.3j, 0.34j, 0.38j), SPEC, BENCH_GRID, WELL, PHYS, tol=1e-7, region=q)
    assert len(cr.resonances) >= 1
    z = min((r.z for r in cr.resonances), key=lambda z: abs(z - guess))
    ref = jost_root(guess, -3.0, 2.0, kappa)
    assert abs(z - ref) / abs(ref) < 1e-6


def test_csv_columns(tmp_path):
    path = tmp_path / "r.csv"
    write_csv([_res(1.5 - 0.01j, 2)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "kappa,degeneracy,re_z,im_z,theta_residual,grid_residual"
    assert lines[1].startswith("2,4,1.5,-0.01,")
    assert math.isnan(float(lines[1].split(",")[-1]))


def test_mesh_artifacts_beyond_resolved_energy_are_set_aside():
    from diracres.dirac_core import FieldConfig
    from diracres.radial import resolved_energy

    grid = RadialGrid(r_max=60.0, N=256, degree=8)
    e_res = resolved_energy(grid, FieldConfig(), PHYS)
    assert e_res == pytest.approx(math.sqrt((math.pi * 257 / 60.0) ** 2 + 1.0))
    cr = channel_resonances(RadialChannel(-1), (0.1j, 0.2j), SPEC, grid, FieldConfig(), PHYS, tol=1e-6, cap=10**6)
    assert cr.resonances == ()
    # element-pinned modes at the top of the discrete spectrum do not move with theta
    assert cr.unresolved and all(abs(z.real) > e_res for z in cr.unresolved)
