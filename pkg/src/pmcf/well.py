"""Double-well potentials, their derivatives, and the associated constants.

The default family is the standard quartic ``(1 - s^2)^2 / 4`` on
``[-2, 2]``; a custom family accepts explicit polynomial coefficients.
Outside ``[-2, 2]`` every accepted well is extended by the quadratic that
matches value, slope and curvature at the seam, so the extended potential
is globally C2 and grows exactly quadratically.

Admissibility (checked at construction): nonnegative, double zeros at
``s = -1`` and ``s = +1`` with curvature at least ``1e-3`` there.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import quad

from .errors import InputError, NumericError

STANDARD_COEFFS = (0.25, 0.0, -0.5, 0.0, 0.25)  # (1 - s^2)^2 / 4, ascending powers

_MIN_CURVATURE = 1e-3
_SEAM = 2.0


@dataclass(frozen=True)
class WellSpec:
    """A validated double-well potential.

    ``family`` is ``"standard"`` or ``"custom"``; ``coeffs`` are ascending
    polynomial coefficients valid on ``[-2, 2]``.
    """

    family: str = "standard"
    coeffs: tuple = STANDARD_COEFFS

    def __post_init__(self):
        if self.family not in ("standard", "custom"):
            raise InputError(f"unknown well family {self.family!r}")
        coeffs = tuple(float(c) for c in self.coeffs)
        object.__setattr__(self, "coeffs", coeffs)
        if self.family == "standard" and coeffs != STANDARD_COEFFS:
            raise InputError("the standard family does not take coefficients")
        _validate(coeffs)

    @property
    def is_standard(self):
        return self.family == "standard"

    # Seam data for the quadratic extension, per side.
    def _seam(self, sign):
        s = sign * _SEAM
        w0 = float(P.polyval(s, self.coeffs))
        w1 = float(P.polyval(s, P.polyder(self.coeffs, 1)))
        w2 = float(P.polyval(s, P.polyder(self.coeffs, 2)))
        return s, w0, w1, w2


def _validate(coeffs):
    for s in (-1.0, 1.0):
        w = float(P.polyval(s, coeffs))
        w1 = float(P.polyval(s, P.polyder(coeffs, 1)))
        w2 = float(P.polyval(s, P.polyder(coeffs, 2)))
        if abs(w) > 1e-12 or abs(w1) > 1e-12:
            raise InputError(f"well must have a double zero at s={s:+.0f}")
        if w2 < _MIN_CURVATURE:
            raise InputError(
                f"well curvature at s={s:+.0f} is {w2:.3g}, below {_MIN_CURVATURE}"
            )
    samples = np.linspace(-_SEAM, _SEAM, 4001)
    vals = P.polyval(samples, coeffs)
    if vals.min() < -1e-12:
        raise InputError("well must be nonnegative on [-2, 2]")
    for sign in (-1.0, 1.0):
        s0 = sign * _SEAM
        w0 = float(P.polyval(s0, coeffs))
        w1 = float(P.polyval(s0, P.polyder(coeffs, 1)))
        w2 = float(P.polyval(s0, P.polyder(coeffs, 2)))
        if w2 <= 0:
            raise InputError("well curvature at the |s|=2 seam must be positive")
        # Quadratic branch minimum must stay nonnegative on its side.
        x_vertex = -w1 / w2
        if sign * x_vertex > 0 and w0 - 0.5 * w1 * w1 / w2 < -1e-12:
            raise InputError("quadratic extension dips below zero")


def eval_well(spec: WellSpec, s):
    """Return the consistent triple ``(W(s), W'(s), W''(s))``; vectorized."""
    s = np.asarray(s, dtype=np.float64)
    if not np.isfinite(s).all():
        raise InputError("well evaluated at non-finite argument")
    w = np.asarray(P.polyval(s, spec.coeffs), dtype=np.float64)
    w1 = np.asarray(P.polyval(s, P.polyder(spec.coeffs, 1)), dtype=np.float64)
    w2 = np.asarray(P.polyval(s, P.polyder(spec.coeffs, 2)), dtype=np.float64)
    w, w1, w2 = np.atleast_1d(w, w1, w2)
    for sign in (-1.0, 1.0):
        s0, q0, q1, q2 = spec._seam(sign)
        mask = (s * sign > _SEAM) if s.ndim else np.atleast_1d(s * sign > _SEAM)
        if mask.any():
            x = np.atleast_1d(s)[mask] - s0
            w[mask] = q0 + q1 * x + 0.5 * q2 * x * x
            w1[mask] = q1 + q2 * x
            w2[mask] = q2
    if s.ndim == 0:
        return float(w[0]), float(w1[0]), float(w2[0])
    return w.reshape(s.shape), w1.reshape(s.shape), w2.reshape(s.shape)


def well_value(spec, s):
    return eval_well(spec, s)[0]


def well_d1(spec, s):
    return eval_well(spec, s)[1]


def well_d2(spec, s):
    return eval_well(spec, s)[2]


def _phi_integrand(spec):
    def f(t):
        return math.sqrt(max(eval_well(spec, t)[0], 0.0) / 2.0)

    return f


def phi_transform(spec: WellSpec, s):
    """Antiderivative of ``sqrt(W/2)`` from 0 to ``s`` (monotone nondecreasing)."""
    arr = np.asarray(s, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InputError("transform evaluated at non-finite argument")
    f = _phi_integrand(spec)
    out = np.empty(arr.shape if arr.ndim else (1,))
    for idx, val in enumerate(np.atleast_1d(arr).ravel()):
        # The integrand has sqrt kinks at the zeros +-1; split there.
        pts = [p for p in (-1.0, 1.0) if min(0.0, val) < p < max(0.0, val)]
        res, err = quad(f, 0.0, float(val), points=pts or None, limit=200)
        if err > 1e-9 * max(1.0, abs(res)):
            raise NumericError(
                f"transform quadrature reached tolerance {err:.2e} only"
            )
        out.ravel()[idx] = res
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


@functools.lru_cache(maxsize=None)
def sigma_constant(spec: WellSpec) -> float:
    """The surface-tension constant: integral of ``sqrt(W/2)`` over [-1, 1]."""
    f = _phi_integrand(spec)
    res, err = quad(f, -1.0, 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
    if err > 1e-10:
        raise NumericError(f"surface-tension quadrature error {err:.2e} > 1e-10")
    return res
