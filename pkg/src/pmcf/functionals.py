"""Discrete energies, their first/second variations, and index estimation.

The inhomogeneous functional on a field u is

    total_F = int eps*|grad u|^2/2 + int W(u)/eps - int lam*g*u

evaluated with the matched stencil pair from ``pmcf.grid``, so that
``first_variation`` is the exact algebraic gradient of ``pmc_energy`` with
respect to the node values (up to the constant cell-volume factor), and
``jacobi_apply`` is its exact linearization.  The index of a critical
point is the number of negative eigenvalues of the Jacobi operator below
a scale-aware threshold ``1e-6 / eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, lobpcg

from .errors import InputError, NumericError
from .grid import ScalarField, gradient_sq, inner, integrate, laplacian, pointwise_map
from .well import WellSpec, eval_well


@dataclass(frozen=True)
class EnergyReport:
    """Split of the discrete energy into its three contributions."""

    dirichlet: float
    potential: float
    forcing: float
    eps: float
    lam: float

    @property
    def total_E(self):
        return self.dirichlet + self.potential

    @property
    def total_F(self):
        return self.total_E - self.forcing

    def csv_row(self):
        return (
            f"{self.eps!r},{self.lam!r},{self.dirichlet!r},{self.potential!r},"
            f"{self.forcing!r},{self.total_E!r},{self.total_F!r}"
        )

    csv_header = "eps,lam,dirichlet,potential,forcing,total_E,total_F"


def _check_eps(eps):
    if not (eps > 0):
        raise InputError(f"eps must be positive, got {eps}")


def _check_forcing(g: ScalarField):
    if g.min() < 0.0:
        raise InputError(
            f"forcing field must be nonnegative node-wise (min {g.min():.3g}); "
            "shift or mollify it first"
        )


def ac_energy(u: ScalarField, eps, w: WellSpec) -> EnergyReport:
    """Homogeneous energy report (zero forcing)."""
    _check_eps(eps)
    dirichlet = 0.5 * eps * integrate(gradient_sq(u))
    potential = integrate(pointwise_map(lambda s: eval_well(w, s)[0], u)) / eps
    return EnergyReport(dirichlet, potential, 0.0, eps, 0.0)


def pmc_energy(u: ScalarField, eps, g: ScalarField, lam, w: WellSpec) -> EnergyReport:
    """Full report for the forced functional; requires ``g >= 0`` node-wise."""
    _check_eps(eps)
    _check_forcing(g)
    base = ac_energy(u, eps, w)
    forcing = lam * inner(g, u)
    return EnergyReport(base.dirichlet, base.potential, forcing, eps, lam)


def first_variation(u: ScalarField, eps, g: ScalarField, lam, w: WellSpec) -> ScalarField:
    """Node-wise residual  -eps*lap(u) + W'(u)/eps - lam*g.

    This is exactly the gradient of :func:`pmc_energy` in the node values
    divided by the cell volume, by the summation-by-parts stencil choice.
    """
    _check_eps(eps)
    lap = laplacian(u)
    wp = pointwise_map(lambda s: eval_well(w, s)[1], u)
    return u.with_values(-eps * lap.values + wp.values / eps - lam * g.values)


def jacobi_apply(u: ScalarField, eps, w: WellSpec, phi: ScalarField) -> ScalarField:
    """Second-variation operator:  -eps*lap(phi) + W''(u)*phi/eps."""
    _check_eps(eps)
    if phi.grid != u.grid:
        raise InputError("test field lives on a different grid")
    w2 = eval_well(w, u.values)[2]
    return u.with_values(-eps * laplacian(phi).values + (w2 / eps) * phi.values)


def stability_form(u: ScalarField, eps, w: WellSpec, phi: ScalarField) -> float:
    """Quadratic form  int eps*|grad phi|^2 + W''(u)*phi^2/eps  (equals
    the inner product of phi with its Jacobi image, exactly)."""
    w2 = eval_well(w, u.values)[2]
    return eps * integrate(gradient_sq(phi)) + float(
        np.sum(w2 * phi.values**2)
    ) * u.grid.cell_volume / eps


@dataclass(frozen=True)
class SpectrumReport:
    """Lowest Jacobi eigenvalues with certified residuals."""

    eigenvalues: tuple
    residuals: tuple
    negative_count: int
    negative_tol: float

    def csv_rows(self):
        return [
            f"{i},{ev!r},{res!r}" for i, (ev, res) in enumerate(zip(self.eigenvalues, self.residuals))
        ]


def morse_index(u: ScalarField, eps, w: WellSpec, k: int, maxiter=None) -> SpectrumReport:
    """k lowest eigenvalues of the Jacobi operator at u.

    Lanczos iteration on the operator shifted by ``2/eps`` (kept positive
    definite on the relevant field range), with a LOBPCG fallback; each
    reported pair is certified by a direct residual evaluation.
    """
    _check_eps(eps)
    n = u.grid.node_count
    if not (1 <= k <= n):
        raise InputError(f"k must lie in [1, {n}], got {k}")
    w2 = eval_well(w, u.values)[2]
    dims = u.grid.dims
    shift = 2.0 / eps

    def matvec(x):
        phi = u.with_values(x.reshape(dims))
        out = -eps * laplacian(phi).values + ((w2 + 2.0) / eps) * phi.values
        return out.ravel()

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    rng = np.random.default_rng(0)
    v0 = np.ones(n) + 1e-3 * rng.standard_normal(n)
    try:
        theta, vecs = eigsh(
            op,
            k=k,
            which="SA",
            v0=v0,
            ncv=min(n, max(4 * k + 1, 40)),
            maxiter=maxiter or 100 * n,
        )
    except ArpackNoConvergence as exc:
        theta, vecs = _lobpcg_fallback(op, n, k, rng, exc)
    order = np.argsort(theta)
    theta, vecs = theta[order], vecs[:, order]
    eigenvalues, residuals = [], []
    for i in range(len(theta)):
        v = vecs[:, i] / np.linalg.norm(vecs[:, i])
        mu = float(theta[i] - shift)
        res = float(np.linalg.norm(matvec(v) - theta[i] * v))
        eigenvalues.append(mu)
        residuals.append(res)
    tol_neg = 1e-6 / eps
    negative = sum(1 for mu in eigenvalues if mu < -tol_neg)
    return SpectrumReport(tuple(eigenvalues), tuple(residuals), negative, tol_neg)


def _lobpcg_fallback(op, n, k, rng, original_exc):
    x0 = rng.standard_normal((n, max(k, 3)))
    try:
        theta, vecs = lobpcg(op, x0, largest=False, tol=1e-10, maxiter=2000)
    except Exception as exc:  # pragma: no cover - double solver failure
        raise NumericError(
            "eigensolver failed to converge",
            payload=getattr(original_exc, "eigenvalues", None),
        ) from exc
    return theta[:k], vecs[:, :k]
