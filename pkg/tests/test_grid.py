import math

import numpy as np
import pytest

from pmcf.errors import FieldFormatError, GridMismatchError, InputError
from pmcf.grid import (
    ScalarField,
    TorusGrid,
    axpy,
    constant_field,
    field_from_function,
    gradient_sq,
    inner,
    integrate,
    laplacian,
    load_field,
    pointwise_map,
    save_field,
)


def test_grid_validation():
    with pytest.raises(InputError):
        TorusGrid((4,), (1.0,))  # too few nodes
    with pytest.raises(InputError):
        TorusGrid((16, 16), (1.0, -1.0))
    with pytest.raises(InputError):
        TorusGrid((16, 16, 16, 16), (1.0,) * 4)


def test_field_finiteness_enforced(grid1d):
    vals = np.zeros(grid1d.dims)
    vals[3] = np.nan
    with pytest.raises(InputError):
        ScalarField(grid1d, vals)


def test_laplacian_of_constant_is_zero(grid2d):
    u = constant_field(grid2d, 3.7)
    assert np.abs(laplacian(u).values).max() == 0.0


@pytest.mark.parametrize("n", [64, 128, 256])
def test_laplacian_eigenfunction_second_order(n):
    # cos(2 pi x / L) is an exact eigenfunction of the periodic Laplacian;
    # the discrete error is C h^2 with C = (2 pi / L)^4 / 12.
    L = 1.0
    grid = TorusGrid((n,), (L,))
    k = 2.0 * math.pi / L
    u = field_from_function(grid, lambda x: np.cos(k * x))
    err = np.abs(laplacian(u).values + k * k * u.values).max()
    C = k**4 / 12.0
    assert err <= 1.1 * C * grid.spacing[0] ** 2


def test_laplacian_axis_separable_2d():
    grid = TorusGrid((64, 96), (1.0, 2.0))
    kx = 2.0 * math.pi / 1.0
    ky = 2.0 * math.pi / 2.0
    u = field_from_function(grid, lambda x, y: np.cos(kx * x) + np.cos(ky * y))
    expect = field_from_function(
        grid, lambda x, y: -kx * kx * np.cos(kx * x) - ky * ky * np.cos(ky * y)
    )
    err = np.abs(laplacian(u).values - expect.values).max()
    bound = (kx**4 * grid.spacing[0] ** 2 + ky**4 * grid.spacing[1] ** 2) / 12.0
    assert err <= 1.1 * bound


def test_gradient_sq_analytic():
    grid = TorusGrid((128,), (1.0,))
    k = 2.0 * math.pi
    u = field_from_function(grid, lambda x: np.sin(k * x))
    expect = k * k * np.cos(k * grid.axis_coords(0)) ** 2
    err = np.abs(gradient_sq(u).values - expect).max()
    assert err < 0.5 * k**4 * grid.spacing[0] ** 2


def test_gradient_sq_sawtooth_total(grid1d):
    # non-smooth wrap must stay finite
    u = field_from_function(grid1d, lambda x: x)
    out = gradient_sq(u)
    assert np.isfinite(out.values).all()


def test_refinement_orders():
    L, k = 1.0, 2.0 * math.pi
    errs_lap, errs_gs = [], []
    for n in (32, 64, 128):
        grid = TorusGrid((n,), (L,))
        u = field_from_function(grid, lambda x: np.cos(k * x))
        errs_lap.append(np.abs(laplacian(u).values + k * k * u.values).max())
        s = field_from_function(grid, lambda x: np.sin(k * x))
        expect = k * k * np.cos(k * grid.axis_coords(0)) ** 2
        errs_gs.append(np.abs(gradient_sq(s).values - expect).max())
    for errs in (errs_lap, errs_gs):
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert min(orders) >= 1.9


def test_integrate_trivials():
    grid = TorusGrid((32, 32), (1.0, 1.0))
    assert integrate(constant_field(grid, 1.0)) == pytest.approx(1.0, abs=1e-15)
    grid4 = TorusGrid((16, 16), (4.0, 4.0))
    assert integrate(constant_field(grid4, 0.3)) == pytest.approx(16 * 0.3)
    g1 = TorusGrid((64,), (2.0,))
    u = field_from_function(g1, lambda x: np.cos(2.0 * math.pi * x / 2.0))
    assert abs(integrate(u)) < 1e-14


def test_symmetry_and_negative_semidefinite(grid2d, rng):
    f = grid2d and ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    g = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    lhs = inner(f, laplacian(g))
    rhs = inner(g, laplacian(f))
    scale = f.l2_norm() * g.l2_norm()
    assert abs(lhs - rhs) <= 1e-12 * scale
    quad = inner(f, laplacian(f))
    assert quad <= 1e-12 * f.l2_norm() ** 2


def test_integration_by_parts_exact(grid2d, rng):
    u = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    total = integrate(gradient_sq(u)) + inner(u, laplacian(u))
    assert abs(total) <= 1e-10 * max(1.0, abs(integrate(gradient_sq(u))))


def test_axpy_and_pointwise(grid2d, rng):
    u = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    v = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    assert np.array_equal(axpy(0.0, v, u).values, u.values)
    flipped = pointwise_map(lambda s: -s, u)
    assert np.array_equal(pointwise_map(lambda s: -s, flipped).values, u.values)
    clamped = pointwise_map(lambda s: np.clip(s, -2, 2), constant_field(grid2d, 0.9))
    assert np.array_equal(clamped.values, constant_field(grid2d, 0.9).values)
    other = TorusGrid((16, 16), (1.0, 1.0))
    with pytest.raises(GridMismatchError):
        axpy(1.0, u, constant_field(other, 0.0))


def test_field_file_roundtrip(tmp_path, grid2d, rng):
    u = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    path = tmp_path / "f.pmcf"
    save_field(path, u)
    back = load_field(path)
    assert back.grid == grid2d
    assert np.array_equal(back.values, u.values)
    # byte-identical on rewrite
    path2 = tmp_path / "g.pmcf"
    save_field(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_field_file_truncated(tmp_path, grid2d, rng):
    u = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    path = tmp_path / "f.pmcf"
    save_field(path, u)
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(FieldFormatError):
        load_field(path)


def test_field_file_magic_and_grid_mismatch(tmp_path, grid2d, rng):
    path = tmp_path / "bad.pmcf"
    path.write_bytes(b"NOPE 1 8 1.0\n" + b"\x00" * 64)
    with pytest.raises(FieldFormatError):
        load_field(path)
    u = ScalarField(grid2d, rng.standard_normal(grid2d.dims))
    good = tmp_path / "good.pmcf"
    save_field(good, u)
    with pytest.raises(FieldFormatError):
        load_field(good, expected_grid=TorusGrid((16, 16), (1.0, 1.0)))
