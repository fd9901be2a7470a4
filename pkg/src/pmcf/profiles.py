"""One-dimensional transition profiles and their energetics.

Provides the monotone connection between the two wells, its truncated
variant that is exactly constant outside a logarithmic-in-eps core, the
even double-interface profile, and the one-parameter family that shrinks
the double interface to the constant low phase.  All derivatives are
analytic: the connection satisfies ``H' = sqrt(2 W(H))`` and
``H'' = W'(H)``, and the truncation blend uses a closed-form smooth bump.

The truncation scale is ``3 |log eps|``: the profile follows the exact
connection on ``(-scale, scale)`` (in stretched coordinates), is glued to
the pure phases over one more scale width, and is exactly ``+-1`` beyond
twice the scale.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import InputError
from .well import WellSpec, eval_well

_TABLE_CORE_END = 0.9  # switch from uniform-u to exponential-tail sampling
_TABLE_TAIL_EPS = 1e-12  # closest approach to the wells (float-representable steps)


# ---------------------------------------------------------------------------
# Smooth bump: 1 on [-1, 1], support [-2, 2], built from exp(-1/t).


def _g(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _g1(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 1e-8
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def _g2(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 1e-8
    tp = t[pos]
    out[pos] = np.exp(-1.0 / tp) * (1.0 / tp**4 - 2.0 / tp**3)
    return out


def smoothstep(t):
    """C-infinity monotone step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=np.float64)
    a, b = _g(t), _g(1.0 - t)
    out = np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0, 0.0))
    mid = (t > 0.0) & (t < 1.0)
    out[mid] = a[mid] / (a[mid] + b[mid])
    return out


def _smoothstep_d12(t):
    t = np.asarray(t, dtype=np.float64)
    d1 = np.zeros_like(t)
    d2 = np.zeros_like(t)
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    a, b = _g(tm), _g(1.0 - tm)
    a1, b1 = _g1(tm), -_g1(1.0 - tm)
    a2, b2 = _g2(tm), _g2(1.0 - tm)
    s = a + b
    d1[mid] = (a1 * b - a * b1) / s**2
    d2[mid] = (a2 * b - a * b2) / s**2 - 2.0 * (a1 * b - a * b1) * (a1 + b1) / s**3
    return d1, d2


def bump(x):
    """Even bump equal to 1 on [-1, 1] with support exactly [-2, 2]."""
    return smoothstep(2.0 - np.abs(np.asarray(x, dtype=np.float64)))


def bump_d12(x):
    """First and second derivative of :func:`bump` (odd / even)."""
    x = np.asarray(x, dtype=np.float64)
    d1, d2 = _smoothstep_d12(2.0 - np.abs(x))
    return -np.sign(x) * d1, d2


# ---------------------------------------------------------------------------
# The monotone connection between the wells.


@functools.lru_cache(maxsize=None)
def _factored_speed(spec: WellSpec):
    """Stable sqrt(2 W(u)) on (-1, 1): near the wells the double root is
    deflated algebraically, avoiding catastrophic cancellation."""
    from numpy.polynomial import Polynomial

    wp = Polynomial(spec.coeffs)
    factors = {}
    for sign in (1.0, -1.0):
        comp = wp(Polynomial([sign, -sign]))  # W(sign * (1 - e)) as poly in e
        coef = comp.coef.copy()
        coef[np.abs(coef) < 1e-13] = 0.0
        if coef[0] != 0.0 or coef[1] != 0.0:
            raise InputError("well lacks a clean double zero for deflation")
        factors[sign] = coef[2:]

    def speed(u):
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        out = np.sqrt(2.0 * np.maximum(np.polynomial.polynomial.polyval(u, spec.coeffs), 0.0))
        for sign in (1.0, -1.0):
            mask = (u * sign) > 0.5
            if mask.any():
                e = 1.0 - sign * u[mask]
                q = np.maximum(np.polynomial.polynomial.polyval(e, factors[sign]), 0.0)
                out[mask] = np.abs(e) * np.sqrt(2.0 * q)
        return float(out[0]) if scalar else out

    return speed


@functools.lru_cache(maxsize=None)
def _connection_spline(spec: WellSpec):
    """Tabulated inverse of r(u) = int du / sqrt(2 W(u)), one branch per sign."""
    speed = _factored_speed(spec)

    def cumulative(us):
        # 5-point Gauss-Legendre on each sub-interval of the graded grid.
        xs, ws = np.polynomial.legendre.leggauss(5)
        r = np.zeros_like(us)
        a, b = us[:-1], us[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * xs[None, :]
        vals = 1.0 / speed(nodes.ravel()).reshape(nodes.shape)
        r[1:] = np.cumsum(half * (vals @ ws))
        return r

    r_all, u_all = [np.array([0.0])], [np.array([0.0])]
    for sign in (1.0, -1.0):
        core = sign * np.linspace(0.0, _TABLE_CORE_END, 1201)
        z = np.linspace(0.0, math.log(_TABLE_CORE_END / _TABLE_TAIL_EPS), 3001)
        tail = sign * 1.0 - sign * (1.0 - _TABLE_CORE_END) * np.exp(-z)
        us = np.concatenate([core, tail[1:]])
        rs = cumulative(us)
        if sign > 0:
            r_all.append(rs[1:])
            u_all.append(us[1:])
        else:
            r_all.insert(0, rs[1:][::-1])
            u_all.insert(0, us[1:][::-1])
    r = np.concatenate(r_all)
    u = np.concatenate(u_all)
    keep = np.concatenate([[True], np.diff(r) > 0])
    r, u = r[keep], u[keep]
    return CubicHermiteSpline(r, u, speed(u)), float(r[0]), float(r[-1])


def heteroclinic(spec: WellSpec, r):
    """The increasing connection u(r) with u(0) = 0 and limits -+1.

    Closed form ``tanh(r / sqrt(2))`` for the standard well; otherwise the
    first-order reduction ``u' = sqrt(2 W(u))`` is inverted from a graded
    quadrature table (accurate to ~1e-10 in the value).
    """
    r = np.asarray(r, dtype=np.float64)
    if not np.isfinite(r).all():
        raise InputError("profile evaluated at non-finite argument")
    if spec.is_standard:
        out = np.tanh(r / math.sqrt(2.0))
    else:
        spline, r_lo, r_hi = _connection_spline(spec)
        out = np.clip(spline(np.clip(r, r_lo, r_hi)), -1.0, 1.0)
        out = np.where(r <= r_lo, -1.0, np.where(r >= r_hi, 1.0, out))
    return float(out) if out.ndim == 0 else out


def heteroclinic_d1(spec: WellSpec, r):
    """Exact slope via the first-order reduction."""
    u = np.asarray(heteroclinic(spec, r))
    if spec.is_standard:
        return (1.0 - u * u) / math.sqrt(2.0)
    return _factored_speed(spec)(u)


def truncation_scale(eps):
    if not (0.0 < eps < 1.0):
        raise InputError(f"eps must lie in (0, 1), got {eps}")
    return 3.0 * abs(math.log(eps))


class _TruncatedCurve:
    """Truncated connection in stretched coordinates (one per well/scale)."""

    def __init__(self, spec: WellSpec, scale: float):
        self.spec = spec
        self.scale = scale

    def value(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        beta = bump(rho / self.scale)
        h = np.asarray(heteroclinic(self.spec, rho))
        return beta * h + (1.0 - beta) * np.sign(rho)

    def d1(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        beta = bump(rho / self.scale)
        b1, _ = bump_d12(rho / self.scale)
        h = np.asarray(heteroclinic(self.spec, rho))
        h1 = heteroclinic_d1(self.spec, rho)
        return (b1 / self.scale) * (h - np.sign(rho)) + beta * h1

    def d2(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        beta = bump(rho / self.scale)
        b1, b2 = bump_d12(rho / self.scale)
        h = np.asarray(heteroclinic(self.spec, rho))
        h1 = heteroclinic_d1(self.spec, rho)
        h2 = eval_well(self.spec, h)[1]  # H'' = W'(H)
        return (
            (b2 / self.scale**2) * (h - np.sign(rho))
            + 2.0 * (b1 / self.scale) * h1
            + beta * h2
        )


@functools.lru_cache(maxsize=None)
def _truncated_curve(spec: WellSpec, scale: float):
    return _TruncatedCurve(spec, scale)


def truncated_profile(spec: WellSpec, eps, r):
    """Rescaled truncated connection: equals the exact connection on the core
    ``(-eps*scale, eps*scale)`` and is exactly -+1 outside ``+-2*eps*scale``."""
    scale = truncation_scale(eps)
    out = _truncated_curve(spec, scale).value(np.asarray(r, dtype=np.float64) / eps)
    return float(out) if out.ndim == 0 else out


def double_profile(spec: WellSpec, eps, t, r):
    """Even double-interface profile family.

    At shift ``t = 0`` the profile rises from -1 to +1 and back; it is
    identically -1 once ``t >= 4 * eps * scale``.
    """
    if t < 0:
        raise InputError(f"shift must be nonnegative, got {t}")
    scale = truncation_scale(eps)
    r = np.asarray(r, dtype=np.float64)
    out = _truncated_curve(spec, scale).value((-np.abs(r) + 2.0 * eps * scale - t) / eps)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Profile1D:
    """A sampled/closed-form 1-D profile with its evaluation rule.

    ``kind`` is one of ``"heteroclinic"``, ``"truncated"``, ``"double"``,
    ``"double-shifted"``; ``t`` is the shift of the double family.
    """

    kind: str
    well: WellSpec
    eps: float
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in ("heteroclinic", "truncated", "double", "double-shifted"):
            raise InputError(f"unknown profile kind {self.kind!r}")
        truncation_scale(self.eps)  # validates eps
        if self.t < 0:
            raise InputError("shift must be nonnegative")
        if self.kind in ("heteroclinic", "truncated") and self.t != 0.0:
            raise InputError(f"{self.kind} profile takes no shift")

    @property
    def scale(self):
        return truncation_scale(self.eps)

    @property
    def support_halfwidth(self):
        """Beyond this radius the profile is constant (double kinds) or
        indistinguishable from the pure phases (untruncated)."""
        core = 4.0 * self.eps * self.scale
        if self.kind == "heteroclinic":
            return max(core, 40.0 * self.eps)
        return core

    def __call__(self, r):
        if self.kind == "heteroclinic":
            return heteroclinic(self.well, np.asarray(r) / self.eps)
        if self.kind == "truncated":
            return truncated_profile(self.well, self.eps, r)
        return double_profile(self.well, self.eps, self.t, r)

    def derivative(self, r):
        r = np.asarray(r, dtype=np.float64)
        curve = _truncated_curve(self.well, self.scale)
        if self.kind == "heteroclinic":
            out = heteroclinic_d1(self.well, r / self.eps) / self.eps
        elif self.kind == "truncated":
            out = curve.d1(r / self.eps) / self.eps
        else:
            arg = (-np.abs(r) + 2.0 * self.eps * self.scale - self.t) / self.eps
            out = -np.sign(r) * curve.d1(arg) / self.eps
        return float(out) if out.ndim == 0 else out

    def energy_density(self, r):
        v = np.asarray(self(r))
        dv = np.asarray(self.derivative(r))
        w = eval_well(self.well, v)[0]
        return 0.5 * self.eps * dv * dv + w / self.eps


def profile_energy(profile: Profile1D) -> float:
    """1-D energy of the profile by composite Simpson quadrature.

    The integrand is split at r = 0 (the shifted double profiles have a
    Lipschitz kink there) and sampled at ~200 points per eps width.
    """
    A = profile.support_halfwidth * 1.02 + profile.eps
    n = max(4001, int(800 * A / profile.eps) | 1)
    total = 0.0
    for lo, hi in ((-A, 0.0), (0.0, A)):
        r = np.linspace(lo, hi, n)
        # evaluate the r = 0 endpoint one-sidedly: the shifted double
        # profiles have a genuine corner there once the transitions merge
        side = -1.0 if hi == 0.0 else 1.0
        r[r == 0.0] = side * 1e-300
        vals = profile.energy_density(r)
        total += float(_simpson(vals, abs(hi - lo) / (n - 1)))
    return total


def _simpson(vals, h):
    # vals has odd length by construction
    return (h / 3.0) * (
        vals[0] + vals[-1] + 4.0 * vals[1:-1:2].sum() + 2.0 * vals[2:-1:2].sum()
    )
