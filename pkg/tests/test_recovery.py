import math

import numpy as np
import pytest

from pmcf import recovery as rc
from pmcf.errors import InputError
from pmcf.functionals import ac_energy, first_variation, pmc_energy
from pmcf.grid import ScalarField, TorusGrid, constant_field, integrate, laplacian
from pmcf.profiles import truncation_scale
from pmcf.well import sigma_constant

EPS = 0.02


@pytest.fixture(scope="module")
def torus():
    return TorusGrid((256, 256), (2.0, 2.0))


@pytest.fixture(scope="module")
def line_spec():
    return rc.InterfaceSpec(
        kind="line",
        normal_axis=1,
        offset=1.0,
        windows=(rc.Window(0.5, 0.2), rc.Window(1.5, 0.2)),
    )


@pytest.fixture(scope="module")
def setup(torus, line_spec, well):
    g = constant_field(torus, 1.0)
    lam = 5.0 * sigma_constant(well)
    return torus, line_spec, g, lam


def test_distance_field_exact_line(setup):
    grid, spec, g, lam = setup
    dist = rc.distance_field(grid, spec)
    y = grid.axis_coords(1)
    expect = np.minimum(np.abs(y - 1.0), 2.0 - np.abs(y - 1.0))
    assert np.allclose(dist.field.values, expect[None, :], atol=1e-14)
    assert dist.tube_radius == pytest.approx(1.0)


def test_distance_point_pair():
    grid = TorusGrid((256,), (4.0,))
    spec = rc.InterfaceSpec(kind="points", points=(1.0, 3.0))
    dist = rc.distance_field(grid, spec)
    assert dist.field.values.min() == 0.0
    assert dist.field.values.max() == pytest.approx(1.0, abs=grid.spacing[0])


def test_fast_marching_matches_exact(setup):
    grid, spec, g, lam = setup
    coarse = TorusGrid((64, 64), (2.0, 2.0))
    mask = np.zeros(coarse.dims, dtype=bool)
    j = int(round(1.0 / coarse.spacing[1]))
    mask[:, j] = True
    fm = rc.distance_from_mask(coarse, mask)
    y = coarse.axis_coords(1)
    expect = np.minimum(np.abs(y - 1.0), 2.0 - np.abs(y - 1.0))
    err = np.abs(fm.field.values - expect[None, :]).max()
    assert err <= 2.0 * coarse.spacing[1]
    # eikonal residual away from the seed and the ridge
    from pmcf.grid import gradient_sq

    gs = np.sqrt(gradient_sq(fm.field).values)
    interior = (fm.field.values > 3 * coarse.spacing[1]) & (
        fm.field.values < 1.0 - 3 * coarse.spacing[1]
    )
    assert np.abs(gs[interior] - 1.0).max() <= 0.15


def test_distance_laplacian_sign_battery(setup):
    # paired against nonnegative test fields supported off the interface,
    # the distance Laplacian is nonpositive up to O(h) (flat torus: the
    # smooth part vanishes and the ridge contributes a negative kink)
    grid, spec, g, lam = setup
    dist = rc.distance_field(grid, spec)
    lap = laplacian(dist.field)
    battery = rc.nonneg_test_battery(grid)
    h = max(grid.spacing)
    for phi in battery:
        support_ok = dist.field.values[phi.values > 0]
        if support_ok.size == 0 or support_ok.min() < 2 * h:
            continue
        pairing = integrate(ScalarField(grid, lap.values * phi.values))
        assert pairing <= 1e-8 + 2.0 * h * integrate(phi)


def test_recovery_function_support_and_energy(setup, well, sigma):
    grid, spec, g, lam = setup
    dist = rc.distance_field(grid, spec)
    u = rc.recovery_function(dist, EPS, well)
    plateau2 = 4.0 * EPS * truncation_scale(EPS)
    assert np.all(u.values[dist.field.values >= plateau2] == -1.0)
    assert u.values.max() == 1.0
    E = ac_energy(u, EPS, well).total_E
    length = spec.length(grid)
    bound = 2.0 * (2.0 * sigma) * length
    assert E <= bound * (1.0 + 0.5 * EPS * abs(math.log(EPS)))
    assert E == pytest.approx(bound, rel=0.02)


def test_recovery_smallness_gate(well):
    grid = TorusGrid((64, 64), (1.0, 1.0))
    spec = rc.InterfaceSpec(kind="line", normal_axis=1, offset=0.5)
    dist = rc.distance_field(grid, spec)
    with pytest.raises(InputError):
        rc.recovery_function(dist, 0.1, well)  # 12 eps |log eps| > 0.5


def test_first_variation_lower_bound_battery(setup, well):
    grid, spec, g, lam = setup
    dist = rc.distance_field(grid, spec)
    u = rc.recovery_function(dist, EPS, well)
    res = first_variation(u, EPS, g, 0.0, well)  # homogeneous part only
    battery = rc.nonneg_test_battery(grid)
    pairings = rc.pair_against_battery(ScalarField(grid, -res.values), battery)
    # lower bound scales like eps |log eps|
    floor = -5.0 * EPS * abs(math.log(EPS))
    assert min(pairings) >= floor


def test_window_profile_slope_bound(setup):
    grid, spec, g, lam = setup
    chi, d1, _ = rc.window_profile(spec, grid, spec.windows[0])
    assert chi.min() >= 0.0 and chi.max() == 1.0
    assert np.abs(d1).max() <= 2.0 / spec.windows[0].radius + 1e-9


def test_bump_out_matches_recovery_at_zero(setup, well):
    grid, spec, g, lam = setup
    dist = rc.distance_field(grid, spec)
    base = rc.recovery_function(dist, EPS, well)
    bump = rc.bump_out(spec, grid, EPS, 0.0, 0, well)
    assert np.array_equal(bump.values, base.values)


def test_bump_out_truncation_far_side(setup, well):
    grid, spec, g, lam = setup
    t = 3e-4
    bump = rc.bump_out(spec, grid, EPS, t, 0, well)
    ta, na, q, s = rc._fermi_coords(spec, grid)
    plateau = 2.0 * EPS * truncation_scale(EPS)
    far = s > plateau * 2.0 + t
    vals = bump.values[:, far] if na == 1 else bump.values[far, :]
    assert np.all(vals == -1.0)
    with pytest.raises(InputError):
        rc.bump_out(spec, grid, EPS, 10.0, 0, well)


def test_bump_down_annihilates_inner_window(setup, well):
    grid, spec, g, lam = setup
    plateau2 = 4.0 * EPS * truncation_scale(EPS)
    full = rc.bump_down(spec, grid, EPS, -plateau2, 0, well)
    ta, na, q, s = rc._fermi_coords(spec, grid)
    inner = grid.circle_distance(q, spec.windows[0].center, ta) <= spec.windows[0].radius
    vals = full.values[inner, :] if na == 1 else full.values[:, inner]
    assert np.all(vals == -1.0)
    with pytest.raises(InputError):
        rc.bump_down(spec, grid, EPS, 0.1, 0, well)


def test_bump_energy_drop_measurement(setup, well, sigma):
    grid, spec, g, lam = setup
    search = rc.t0_search(spec, grid, EPS, g, lam, well, 0)
    assert search.t0 > 0 and search.tau > 0
    assert search.curvature_max <= search.curvature_cap
    f0 = pmc_energy(rc.bump_out(spec, grid, EPS, 0.0, 0, well), EPS, g, lam, well)
    ft = pmc_energy(
        rc.bump_out(spec, grid, EPS, search.t0, 0, well), EPS, g, lam, well
    )
    measured = (f0.total_F - ft.total_F) / (2.0 * sigma)
    assert measured == pytest.approx(2.0 * search.tau, rel=1e-9)
    assert search.tau < 2.0 * (2.0 * spec.windows[0].radius)


@pytest.fixture(scope="module")
def searches(setup, well):
    grid, spec, g, lam = setup
    return (
        rc.t0_search(spec, grid, EPS, g, lam, well, 0),
        rc.t0_search(spec, grid, EPS, g, lam, well, 1),
    )


def test_avoid_peak_path_structure(setup, searches, well):
    grid, spec, g, lam = setup
    t0s = (searches[0].t0, searches[1].t0)
    path = rc.avoid_peak_path(spec, grid, EPS, g, lam, well, t0s, knots_per_stage=4)
    dist = rc.distance_field(grid, spec)
    base = rc.recovery_function(dist, EPS, well)
    ta = spec.tangent_axis(grid)
    q = grid.axis_coords(ta)
    outside = np.ones(len(q), dtype=bool)
    for wdw in spec.windows:
        outside &= grid.circle_distance(q, wdw.center, ta) > 2.0 * wdw.radius
    for u in path.knots:
        assert np.array_equal(u.values[outside, :], base.values[outside, :])
        assert u.values.min() >= -1.0 and u.values.max() <= 1.0
    assert path.mesh_constant() < 2.0  # continuity surrogate exists


def test_annihilation_path_reaches_valley(setup, searches, well):
    grid, spec, g, lam = setup
    from pmcf.flows import valley_points

    low, high, _ = valley_points(EPS, g, lam, well)
    t0s = (searches[0].t0, searches[1].t0)
    gamma = rc.avoid_peak_path(spec, grid, EPS, g, lam, well, t0s, knots_per_stage=4)
    path = rc.annihilation_path(
        spec, grid, EPS, g, lam, well, gamma.knots[0], low, n_knots=8
    )
    assert np.array_equal(path.knots[-1].values, low.values)
    # the sweep end is the exact constant -1 before the flow segment
    mins = [abs(u.values.max() + 1.0) for u in path.knots]
    assert min(mins) < 1e-12


def test_mean_convex_seed_and_stable_state(setup, searches, well):
    grid, spec, g, lam = setup
    h, report = rc.mean_convex_seed(spec, grid, EPS, g, lam, well, searches)
    assert report.passed
    assert report.nodewise_min > 0
    assert report.battery_min >= report.margin_required - 1e-9
    mask = rc.witness_region(spec, grid, searches)
    assert mask.any()
    assert np.all(h.values[mask] == 1.0)

    from pmcf.flows import valley_points

    low, high, _ = valley_points(EPS, g, lam, well)
    v, trace, witness = rc.stable_from_seed(
        spec, grid, EPS, g, lam, well, searches, valley_high=high,
    )
    assert trace.reason == "converged"
    assert witness.witness_covered
    assert witness.dominates_seed
    assert witness.below_high_valley
    assert witness.negative_count == 0
    energies = trace.energies()
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(energies, energies[1:]))


def test_mollify_properties(setup, rng):
    grid, spec, g, lam = setup
    u = ScalarField(grid, rng.standard_normal(grid.dims))
    assert rc.mollify(u, 0.0) is u
    const = constant_field(grid, 0.7)
    out = rc.mollify(const, 0.1)
    assert np.allclose(out.values, 0.7, atol=1e-12)
    smoothed = rc.mollify(u, 0.05)
    assert integrate(smoothed) == pytest.approx(integrate(u), abs=1e-12)
    with pytest.raises(InputError):
        rc.mollify(u, 1.5)


def test_window_validation(torus):
    with pytest.raises(InputError):
        rc.InterfaceSpec(
            kind="line", normal_axis=1, offset=1.0,
            windows=(rc.Window(0.5, 0.2), rc.Window(1.5, 0.3)),
        )
    overlapping = rc.InterfaceSpec(
        kind="line", normal_axis=1, offset=1.0,
        windows=(rc.Window(0.5, 0.3), rc.Window(1.2, 0.3)),
    )
    with pytest.raises(InputError):
        overlapping.validate_windows(torus)
