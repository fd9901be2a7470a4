"""Periodic rectangular grids and scalar fields in dimension 1, 2 or 3.

This module is the discrete stand-in for the compact ambient manifold:
a flat torus sampled on a uniform node lattice, with finite-difference
operators and quadrature chosen so that discrete summation by parts is
exact.  The Laplacian is the backward divergence of the forward-difference
gradient (the usual second-order central stencil), and ``gradient_sq``
averages the squared forward and backward differences per axis.  With this
pairing

    integrate(gradient_sq(u)) == -integrate(u * laplacian(u))

holds to rounding error, which makes the discrete first variation of the
discrete energy an exact algebraic gradient (see ``pmcf.functionals``).

Fields are immutable values: operators never modify their inputs and the
underlying arrays are marked read-only.  All operators are pure, so fields
may be shared freely across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FieldFormatError, GridMismatchError, InputError

FIELD_MAGIC = "PMCF1"


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid: ``dims[i]`` nodes spanning side length ``extents[i]``.

    Node ``(k_0, ..., k_{d-1})`` sits at coordinates ``k_i * spacing[i]``;
    index arithmetic wraps modulo ``dims[i]`` in every axis.
    """

    dims: tuple
    extents: tuple

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        extents = tuple(float(L) for L in self.extents)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "extents", extents)
        if len(dims) not in (1, 2, 3):
            raise InputError(f"grid dimension must be 1, 2 or 3, got {len(dims)}")
        if len(extents) != len(dims):
            raise InputError("dims and extents must have equal length")
        if any(n < 8 for n in dims):
            raise InputError(f"every axis needs at least 8 nodes, got {dims}")
        if any(not (L > 0) for L in extents):
            raise InputError(f"extents must be positive, got {extents}")

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.extents, self.dims))

    @property
    def cell_volume(self):
        return math.prod(self.spacing)

    @property
    def node_count(self):
        return math.prod(self.dims)

    def axis_coords(self, axis):
        """1-D array of node coordinates along ``axis``."""
        n = self.dims[axis]
        return np.arange(n) * (self.extents[axis] / n)

    def coords(self):
        """Tuple of broadcastable coordinate arrays, one per axis."""
        axes = [self.axis_coords(a) for a in range(self.ndim)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def min_image(self, delta, axis):
        """Signed displacement wrapped to (-L/2, L/2] along ``axis``."""
        L = self.extents[axis]
        return (np.asarray(delta) + 0.5 * L) % L - 0.5 * L

    def circle_distance(self, a, b, axis):
        """Distance between coordinates ``a`` and ``b`` on the periodic axis."""
        return np.abs(self.min_image(np.asarray(a) - b, axis))


@dataclass(frozen=True)
class ScalarField:
    """Node values of a real function on a :class:`TorusGrid`.

    ``values`` has shape ``grid.dims`` and is read-only; every public
    operation returns a new field and checks finiteness of the result.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.dims:
            raise GridMismatchError(
                f"field shape {v.shape} does not match grid dims {self.grid.dims}"
            )
        if not np.isfinite(v).all():
            raise InputError("field contains NaN or Inf")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values):
        return ScalarField(self.grid, values)

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())

    def sup_norm(self):
        return float(np.abs(self.values).max())

    def l2_norm(self):
        """Grid L2 norm, including the volume element."""
        return math.sqrt(float(np.sum(self.values**2)) * self.grid.cell_volume)


def constant_field(grid, value):
    return ScalarField(grid, np.full(grid.dims, float(value)))


def field_from_function(grid, fn):
    """Sample ``fn(*coords)`` at the grid nodes."""
    values = np.broadcast_to(fn(*grid.coords()), grid.dims)
    return ScalarField(grid, np.array(values, dtype=np.float64))


def _check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    return g


def laplacian(u: ScalarField) -> ScalarField:
    """Second-order periodic Laplacian (backward divergence of forward gradient)."""
    v = u.values
    out = np.zeros_like(v)
    for axis, h in enumerate(u.grid.spacing):
        out += (np.roll(v, -1, axis) - 2.0 * v + np.roll(v, 1, axis)) / (h * h)
    return u.with_values(out)


def gradient_sq(u: ScalarField) -> ScalarField:
    """Node-wise squared gradient magnitude, periodic.

    Uses the mean of squared forward and backward differences per axis:
    second-order accurate at the nodes, and its integral equals the pure
    forward-difference Dirichlet sum exactly, so integration by parts
    against :func:`laplacian` is exact.
    """
    v = u.values
    out = np.zeros_like(v)
    for axis, h in enumerate(u.grid.spacing):
        fwd = (np.roll(v, -1, axis) - v) / h
        bwd = (v - np.roll(v, 1, axis)) / h
        out += 0.5 * (fwd * fwd + bwd * bwd)
    return u.with_values(out)


def integrate(u: ScalarField) -> float:
    """Quadrature of ``u`` over the torus (node sum times cell volume)."""
    return float(np.sum(u.values)) * u.grid.cell_volume


def inner(u: ScalarField, v: ScalarField) -> float:
    """L2 inner product including the volume element."""
    _check_same_grid(u, v)
    return float(np.sum(u.values * v.values)) * u.grid.cell_volume


def axpy(alpha, x: ScalarField, y: ScalarField) -> ScalarField:
    """``alpha * x + y``, element-wise; allocates exactly one new array."""
    _check_same_grid(x, y)
    return x.with_values(float(alpha) * x.values + y.values)


def pointwise_map(fn, *fields) -> ScalarField:
    """Apply a vectorized scalar map to one or more same-grid fields."""
    g = _check_same_grid(*fields)
    out = np.asarray(fn(*(f.values for f in fields)), dtype=np.float64)
    out = np.broadcast_to(out, g.dims)
    return ScalarField(g, np.array(out))


def save_field(path, field: ScalarField):
    """Write a field in the PMCF1 format.

    One ASCII header line ``PMCF1 d dims... extents...`` followed by the
    node values as little-endian float64, flattened with axis 0 fastest.
    The float formatting round-trips exactly, so identical fields produce
    bit-identical files.
    """
    g = field.grid
    header = " ".join(
        [FIELD_MAGIC, str(g.ndim)]
        + [str(n) for n in g.dims]
        + [repr(L) for L in g.extents]
    )
    payload = field.values.ravel(order="F").astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(payload)


def load_field(path, expected_grid=None) -> ScalarField:
    """Read a PMCF1 field file; validates magic, shape and byte length."""
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    parts = header.decode("ascii", errors="replace").split()
    if not parts or parts[0] != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: missing {FIELD_MAGIC} magic")
    try:
        d = int(parts[1])
        dims = tuple(int(x) for x in parts[2 : 2 + d])
        extents = tuple(float(x) for x in parts[2 + d : 2 + 2 * d])
    except (IndexError, ValueError) as exc:
        raise FieldFormatError(f"{path}: malformed header {parts!r}") from exc
    if len(dims) != d or len(extents) != d or len(parts) != 2 + 2 * d:
        raise FieldFormatError(f"{path}: malformed header {parts!r}")
    grid = TorusGrid(dims, extents)
    if expected_grid is not None and grid != expected_grid:
        raise FieldFormatError(
            f"{path}: file grid {dims}/{extents} does not match expected "
            f"{expected_grid.dims}/{expected_grid.extents}"
        )
    n = grid.node_count
    if len(payload) != 8 * n:
        raise FieldFormatError(
            f"{path}: expected {8 * n} payload bytes, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(dims, order="F")
    return ScalarField(grid, values)
