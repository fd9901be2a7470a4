import math

import numpy as np
import pytest

from pmcf.errors import InputError
from pmcf.profiles import (
    Profile1D,
    bump,
    double_profile,
    heteroclinic,
    heteroclinic_d1,
    profile_energy,
    smoothstep,
    truncated_profile,
    truncation_scale,
)
from pmcf.well import WellSpec, eval_well

EPS = 0.05


def test_bump_support_and_plateau():
    assert np.all(bump(np.linspace(-0.999, 0.999, 41)) == 1.0)
    assert np.all(bump(np.array([-2.0, 2.0, 3.0, -5.0])) == 0.0)
    mid = bump(np.array([1.5]))
    assert 0.0 < mid[0] < 1.0
    t = np.linspace(-3, 3, 601)
    assert np.all(np.diff(smoothstep(t)) >= 0)


def test_heteroclinic_center_and_limits(well):
    assert heteroclinic(well, 0.0) == 0.0
    assert abs(heteroclinic(well, 50.0) - 1.0) <= 1e-12
    assert abs(heteroclinic(well, -50.0) + 1.0) <= 1e-12
    r_half = math.sqrt(2.0) * math.atanh(0.5)
    assert heteroclinic(well, r_half) == pytest.approx(0.5, abs=1e-12)


def test_heteroclinic_generic_path_matches_closed_form():
    generic = WellSpec("custom", (0.25, 0.0, -0.5, 0.0, 0.25))
    r = np.linspace(-10, 10, 1000)
    err = np.abs(heteroclinic(generic, r) - np.tanh(r / math.sqrt(2.0)))
    assert err.max() < 1e-9


def test_heteroclinic_slope_is_first_order_reduction(well):
    r = np.linspace(-4, 4, 81)
    h = 1e-6
    fd = (heteroclinic(well, r + h) - heteroclinic(well, r - h)) / (2 * h)
    assert np.abs(fd - heteroclinic_d1(well, r)).max() < 1e-9


def test_truncated_support_facts(well):
    scale = truncation_scale(EPS)
    plateau = 2.0 * EPS * scale
    assert truncated_profile(well, EPS, plateau) == 1.0
    assert truncated_profile(well, EPS, plateau + 5.0) == 1.0
    assert truncated_profile(well, EPS, -plateau - 0.3) == -1.0
    assert truncated_profile(well, EPS, 0.0) == 0.0
    # equals the exact connection on the core
    core = np.linspace(-EPS * scale * 0.99, EPS * scale * 0.99, 101)
    assert np.allclose(
        truncated_profile(well, EPS, core), heteroclinic(well, core / EPS), atol=1e-12
    )
    r = np.linspace(-plateau - 0.2, plateau + 0.2, 2001)
    vals = truncated_profile(well, EPS, r)
    assert np.all(np.diff(vals) >= -1e-14)
    assert vals.min() >= -1.0 and vals.max() <= 1.0


def test_truncated_ode_defect_golden(well):
    # the truncation keeps the 1-d equation satisfied to far below eps^2:
    # frozen bound measured once on the standard well
    from pmcf.profiles import _truncated_curve

    scale = truncation_scale(EPS)
    curve = _truncated_curve(well, scale)
    rho = np.linspace(-2 * scale, 2 * scale, 20001)
    defect = np.abs(curve.d2(rho) - eval_well(well, curve.value(rho))[1])
    assert defect.max() <= 0.02 * EPS**2


def test_eps_validation(well):
    with pytest.raises(InputError):
        truncated_profile(well, 1.5, 0.0)
    with pytest.raises(InputError):
        Profile1D("double", well, EPS, t=-0.1)
    with pytest.raises(InputError):
        Profile1D("nonsense", well, EPS)


def test_double_profile_facts(well, rng):
    scale = truncation_scale(EPS)
    assert double_profile(well, EPS, 0.0, 0.0) == 1.0
    r = rng.uniform(-2, 2, size=50)
    big_t = 4.0 * EPS * scale
    assert np.all(double_profile(well, EPS, big_t, r) == -1.0)
    vals_p = double_profile(well, EPS, 0.7 * EPS * scale, r)
    vals_m = double_profile(well, EPS, 0.7 * EPS * scale, -r)
    assert np.array_equal(vals_p, vals_m)


def test_profile_energies(well, sigma):
    het = Profile1D("heteroclinic", well, EPS)
    assert profile_energy(het) == pytest.approx(2.0 * sigma, abs=1e-6)
    double = Profile1D("double", well, EPS)
    assert profile_energy(double) == pytest.approx(4.0 * sigma, abs=2e-4)


def test_truncated_energy_order(well, sigma):
    errs = []
    for eps in (0.2, 0.1, 0.05):
        p = Profile1D("truncated", well, eps)
        errs.append(abs(profile_energy(p) - 2.0 * sigma))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.8


def test_family_energy_identity_and_monotonicity(well):
    scale = truncation_scale(EPS)
    base = Profile1D("double", well, EPS)
    E0 = profile_energy(base)
    ts = np.linspace(0.0, 4.0 * EPS * scale, 50)
    energies = []
    for t in ts:
        p = base if t == 0.0 else Profile1D("double-shifted", well, EPS, t)
        energies.append(profile_energy(p))
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))
    assert energies[-1] == pytest.approx(0.0, abs=1e-12)
    # exact identity: the lost energy is the density integral over (-t, t)
    for t in (ts[7], ts[23], ts[40]):
        r = np.linspace(-t, t, 40001)
        dens = base.energy_density(r)
        h = r[1] - r[0]
        cut = (h / 3.0) * (
            dens[0] + dens[-1] + 4.0 * dens[1:-1:2].sum() + 2.0 * dens[2:-1:2].sum()
        )
        p = Profile1D("double-shifted", well, EPS, t)
        assert profile_energy(p) == pytest.approx(E0 - cut, abs=1e-8)


def test_values_bounded(well, rng):
    r = rng.uniform(-3, 3, size=200)
    for kind, t in (("heteroclinic", 0.0), ("truncated", 0.0), ("double-shifted", 0.4)):
        p = Profile1D(kind, well, EPS, t)
        vals = np.asarray(p(r))
        assert vals.min() >= -1.0 - 1e-14 and vals.max() <= 1.0 + 1e-14
