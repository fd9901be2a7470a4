import numpy as np
import pytest

from pmcf.errors import InputError
from pmcf.flows import valley_points
from pmcf.functionals import ac_energy, pmc_energy
from pmcf.grid import TorusGrid, constant_field, integrate, pointwise_map
from pmcf.minmax import (
    MinmaxOptions,
    PhasePath,
    initial_path,
    mountain_pass,
    verify_wall,
    wall_coordinate,
)

EPS = 0.15


@pytest.fixture(scope="module")
def ring():
    return TorusGrid((256,), (4.0,))


@pytest.fixture(scope="module")
def ring_setup(ring, well, sigma):
    g = constant_field(ring, 1.0)
    low, high, _ = valley_points(EPS, g, sigma, well)
    return g, low, high


def test_wall_coordinate_trivials(ring):
    g = constant_field(ring, 1.0)
    assert wall_coordinate(constant_field(ring, -1.0), g) == pytest.approx(0.0)
    assert wall_coordinate(constant_field(ring, 1.0), g) == pytest.approx(
        2.0 * integrate(g)
    )


def test_phase_path_validation(ring):
    u = constant_field(ring, 0.0)
    with pytest.raises(InputError):
        PhasePath((u, u), (-1.0, 1.0))
    with pytest.raises(InputError):
        PhasePath((u, u, u), (-1.0, 0.5, 0.2))


def test_initial_path_properties(ring_setup, well, sigma):
    g, low, high = ring_setup
    path = initial_path(low, high, EPS, g, 16, w=well)
    assert np.array_equal(path.knots[0].values, low.values)
    assert np.array_equal(path.knots[-1].values, high.values)
    coords = [wall_coordinate(u, g) for u in path.knots]
    assert all(b > a for a, b in zip(coords, coords[1:]))
    # moving front pair energy: two point-interfaces on the circle
    peak_E = max(ac_energy(u, EPS, well).total_E for u in path.knots)
    assert peak_E <= 2.0 * (2.0 * sigma) * 1.2
    with pytest.raises(InputError):
        initial_path(low, high, EPS, g, 4, w=well)
    with pytest.raises(InputError):
        initial_path(high, low, EPS, g, 16, w=well)


@pytest.fixture(scope="module")
def ring_result(ring_setup, well, sigma):
    g, low, high = ring_setup
    path0 = initial_path(low, high, EPS, g, 32, w=well)
    opts = MinmaxOptions(well=well, seed_noise=0.0)
    return g, low, high, path0, mountain_pass(path0, EPS, g, sigma, well, opts)


def test_mountain_pass_on_circle(ring_result, well, sigma):
    g, low, high, path0, res = ring_result
    int_lam_g = sigma * integrate(g)
    assert res.width > int_lam_g
    assert res.residual_sup <= 1e-7 * (sigma + 1.0 / EPS) * 10
    assert res.spectrum.negative_count == 1
    # the saddle is a genuine front pair
    crossings = int(np.sum(np.diff(np.sign(res.saddle.values)) != 0))
    assert crossings == 2
    E = ac_energy(res.saddle, EPS, well).total_E
    assert E == pytest.approx(4.0 * sigma, rel=0.1)


def test_width_history_monotone_and_bounds(ring_result, well, sigma):
    g, low, high, path0, res = ring_result
    wh = res.width_history
    assert all(b <= a + 1e-10 * abs(a) for a, b in zip(wh, wh[1:]))
    assert res.width <= wh[0]
    # saddle consistency: the peak knot is the saddle, and the width is its energy
    energies = [pmc_energy(u, EPS, g, sigma, well).total_F for u in res.path.knots]
    peak = int(np.argmax(energies))
    assert np.array_equal(res.path.knots[peak].values, res.saddle.values)
    assert res.width == pytest.approx(energies[peak])


def test_endpoints_pinned(ring_result):
    g, low, high, path0, res = ring_result
    assert np.array_equal(res.path.knots[0].values, low.values)
    assert np.array_equal(res.path.knots[-1].values, high.values)


def test_verify_wall(ring_result, well, sigma):
    g, low, high, path0, res = ring_result
    lam_g = pointwise_map(lambda v: sigma * v, g)
    probe = sigma * integrate(g)
    report = verify_wall(res, lam_g, probe)
    assert report.count_in_band >= 1
    assert report.passes
    # delta probe far outside the crossed range -> diagnostic warning
    off = verify_wall(res, lam_g, 100.0, band=0.01)
    assert off.count_in_band == 0 and off.passes is None
    # the trivial low end: the low valley sits below the wall threshold
    low_F = pmc_energy(low, EPS, g, sigma, well).total_F
    assert low_F < probe
