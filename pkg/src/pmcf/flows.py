"""Negative gradient flow of the forced functional, and the valley states.

One step treats the Laplacian implicitly (a periodic Helmholtz solve,
diagonal in Fourier space) and the well force explicitly, with a linear
stabilization shift ``kappa >= max W''`` over the traversed value range.
Two structural properties follow for any step size:

* energy decrease (the shift dominates half the well curvature), and
* node-wise comparison: ``u <= v`` implies ``step(u) <= step(v)``,

so a start with node-wise negative residual produces node-wise
nondecreasing iterates, constants beyond the wells act as barriers, and
iterates started inside the corridor ``[-1, 1 + c*eps]`` stay in it.
Flow time is normalized so that ``eps * du/dt = -residual``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError
from .functionals import first_variation, pmc_energy
from .grid import ScalarField, constant_field
from .well import WellSpec, eval_well

_DISSIPATION_SLACK = 1e-12
_MONOTONE_SLACK = 1e-12
_BLOWUP_GUARD = 4.0


@dataclass(frozen=True)
class FlowRecord:
    step: int
    time: float
    total_F: float
    residual_sup: float
    u_min: float
    u_max: float


@dataclass
class FlowTrace:
    """Append-only per-step records plus the termination reason."""

    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    reason: str = "incomplete"

    def append(self, rec: FlowRecord):
        self.records.append(rec)

    @property
    def final(self):
        return self.records[-1]

    def energies(self):
        return [r.total_F for r in self.records]

    def csv_rows(self):
        return [
            f"{r.step},{r.time!r},{r.total_F!r},{r.residual_sup!r},{r.u_min!r},{r.u_max!r}"
            for r in self.records
        ]

    csv_header = "step,time,total_F,residual_sup,u_min,u_max"


def stabilization_shift(w: WellSpec, lo=-1.1, hi=1.1):
    """Upper bound for W'' over the value range the flow will traverse."""
    samples = np.linspace(lo - 0.05, hi + 0.05, 513)
    return float(eval_well(w, samples)[2].max())


@functools.lru_cache(maxsize=64)
def _helmholtz_symbol(grid, dt, kappa_over_eps2):
    """Fourier multiplier of (I + dt*kappa/eps^2 - dt*lap) on the grid."""
    sym = np.ones([n if a < grid.ndim - 1 else n // 2 + 1 for a, n in enumerate(grid.dims)])
    sym = sym * (1.0 + dt * kappa_over_eps2)
    for axis, (n, h) in enumerate(zip(grid.dims, grid.spacing)):
        k = np.arange(n if axis < grid.ndim - 1 else n // 2 + 1)
        lam = -4.0 * np.sin(math.pi * k / n) ** 2 / (h * h)
        shape = [1] * grid.ndim
        shape[axis] = len(k)
        sym = sym - dt * lam.reshape(shape)
    return sym


def flow_step(u: ScalarField, eps, g: ScalarField, lam, dt, w: WellSpec, kappa=None):
    """One stabilized implicit-explicit step of flow time ``dt``.

    Stationary fields are exact fixed points: the update solves
    ``(I + dt*kappa/eps^2 - dt*lap) u+ = u - dt*residual(u)/eps + dt*kappa*u/eps^2``.
    """
    if not (dt > 0):
        raise InputError(f"dt must be positive, got {dt}")
    if kappa is None:
        kappa = stabilization_shift(w, u.min(), u.max())
    wp = eval_well(w, u.values)[1]
    rhs = u.values + dt * ((kappa * u.values - wp) / eps**2 + lam * g.values / eps)
    sym = _helmholtz_symbol(u.grid, float(dt), float(kappa) / eps**2)
    axes = tuple(range(u.grid.ndim))
    out = np.fft.irfftn(np.fft.rfftn(rhs) / sym, s=u.grid.dims, axes=axes)
    if not np.isfinite(out).all():
        raise NumericError("flow step produced non-finite values")
    return u.with_values(out)


def default_tolerance(eps, g: ScalarField, lam):
    return 1e-8 * (lam * g.max() + 1.0 / eps)


def flow_to_stationary(
    u0: ScalarField,
    eps,
    g: ScalarField,
    lam,
    w: WellSpec,
    tol=None,
    max_steps=200_000,
    dt=None,
    record_every=25,
    monotone=None,
    snapshot_every=None,
):
    """Run the flow until the residual sup-norm drops below ``tol``.

    Returns ``(field, trace)``.  ``monotone="increasing"`` additionally
    enforces node-wise nondecreasing iterates (used by the mean-convex
    seed flow) and raises :class:`NumericError` on violation.  The step
    size halves whenever a step fails to dissipate energy.  With
    ``snapshot_every`` set, intermediate fields are kept on the trace so
    the flow segment can serve as part of a path.
    """
    if tol is None:
        tol = default_tolerance(eps, g, lam)
    if dt is None:
        dt = eps / 4.0
    kappa = stabilization_shift(w, min(u0.min(), -1.0), max(u0.max(), 1.0))
    trace = FlowTrace()
    u = u0
    t = 0.0
    energy = pmc_energy(u, eps, g, lam, w).total_F
    for step in range(max_steps + 1):
        res = first_variation(u, eps, g, lam, w)
        res_sup = res.sup_norm()
        if step % record_every == 0 or res_sup <= tol:
            trace.append(FlowRecord(step, t, energy, res_sup, u.min(), u.max()))
        if snapshot_every is not None and (step % snapshot_every == 0 or res_sup <= tol):
            trace.snapshots.append((step, u))
        if res_sup <= tol:
            trace.reason = "converged"
            return u, trace
        if max(abs(u.min()), abs(u.max())) > _BLOWUP_GUARD:
            trace.reason = "blow-up-guard"
            raise NumericError("flow left the meaningful value range", payload=trace)
        attempts = 0
        while True:
            candidate = flow_step(u, eps, g, lam, dt, w, kappa=kappa)
            new_energy = pmc_energy(candidate, eps, g, lam, w).total_F
            if new_energy <= energy + _DISSIPATION_SLACK * abs(energy):
                break
            dt *= 0.5
            attempts += 1
            if attempts > 40:
                trace.reason = "max-steps"
                raise NumericError("step size collapsed without dissipation", payload=trace)
        if monotone == "increasing":
            drop = float((u.values - candidate.values).max())
            if drop > _MONOTONE_SLACK:
                trace.reason = "max-steps"
                raise NumericError(
                    f"iterates lost monotonicity by {drop:.3e}; reduce dt or the "
                    "mollification radius",
                    payload=trace,
                )
        u, energy, t = candidate, new_energy, t + dt
    trace.reason = "max-steps"
    raise NumericError(f"no convergence within {max_steps} steps", payload=trace)


@dataclass(frozen=True)
class BarrierReport:
    """Verified node-wise barrier data for the valley construction."""

    c: float
    descent_at_low: float  # min over nodes of -residual(-1): must be > 0
    ascent_at_low_cap: float  # max over nodes of -residual(-1+c*eps): must be < 0
    descent_at_high: float  # min over nodes of -residual(+1): must be > 0
    ascent_at_high_cap: float  # max over nodes of -residual(1+c*eps): must be < 0

    @property
    def holds(self):
        return (
            self.descent_at_low > 0
            and self.ascent_at_low_cap < 0
            and self.descent_at_high > 0
            and self.ascent_at_high_cap < 0
        )


def _barrier_offset(w: WellSpec, base, target):
    """Smallest x > 0 with W'(base + x) >= target on the first increasing branch."""
    xs = np.linspace(0.0, 1.0, 20001)[1:]
    vals = eval_well(w, base + xs)[1]
    hit = np.nonzero(vals >= target)[0]
    if len(hit) == 0:
        return None
    # Make sure the branch actually reached the target monotonically.
    i = hit[0]
    if np.any(np.diff(vals[: i + 1]) < -1e-14):
        return None
    return float(xs[i])


def valley_points(eps, g: ScalarField, lam, w: WellSpec, tol=None, max_steps=200_000):
    """Stable states hugging the two wells, with verified barriers.

    Returns ``(low, high, report)`` where ``-1 < low < -1 + c*eps`` and
    ``1 < high < 1 + c*eps`` node-wise, both converged to the residual
    tolerance by the monotone flow started at the constants -+1.
    """
    if lam * g.min() <= 0.0:
        raise InputError(
            "the forcing lam*g must be positive node-wise for the valley "
            "construction; shift g by a positive amount first"
        )
    grid = g.grid
    target = eps * lam * g.max()
    offsets = []
    for base in (-1.0, 1.0):
        x = _barrier_offset(w, base, target)
        if x is None:
            raise NumericError(
                f"no barrier offset below the cap: eps={eps} is too large for "
                f"this forcing (needs W' to reach {target:.3g})"
            )
        offsets.append(x)
    c = None
    for safety in (1.05, 1.1, 1.25, 1.5):
        cand = safety * max(offsets) / eps
        report = _verify_barriers(eps, g, lam, w, cand)
        if report.holds:
            c = cand
            break
    if c is None:
        raise NumericError("barrier verification failed at every safety margin")
    low, _ = flow_to_stationary(
        constant_field(grid, -1.0), eps, g, lam, w, tol=tol, max_steps=max_steps,
        monotone="increasing",
    )
    high, _ = flow_to_stationary(
        constant_field(grid, 1.0), eps, g, lam, w, tol=tol, max_steps=max_steps,
        monotone="increasing",
    )
    for name, f, lo, hi in (
        ("low valley", low, -1.0, -1.0 + c * eps),
        ("high valley", high, 1.0, 1.0 + c * eps),
    ):
        if not (lo < f.min() and f.max() < hi):
            raise NumericError(
                f"{name} escaped its corridor ({f.min():.6g}, {f.max():.6g}) "
                f"vs ({lo:.6g}, {hi:.6g})"
            )
    return low, high, report


def _verify_barriers(eps, g, lam, w, c):
    grid = g.grid

    def neg_residual(value):
        u = constant_field(grid, value)
        r = first_variation(u, eps, g, lam, w)
        return -r.values

    lo = neg_residual(-1.0)
    lo_cap = neg_residual(-1.0 + c * eps)
    hi = neg_residual(1.0)
    hi_cap = neg_residual(1.0 + c * eps)
    return BarrierReport(
        c=c,
        descent_at_low=float(lo.min()),
        ascent_at_low_cap=float(lo_cap.max()),
        descent_at_high=float(hi.min()),
        ascent_at_high_cap=float(hi_cap.max()),
    )
