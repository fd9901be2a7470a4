"""Mountain-pass search between the two valley states.

``initial_path`` builds the coordinate sweep: a front pair nucleates at a
point of the chosen axis circle and widens until the high phase covers the
torus, blended between the exact valley endpoints so the wall coordinate
``int g*u + int g`` is strictly increasing along the knots.

``mountain_pass`` relaxes the path with the flow (a string method with
L2 re-equidistribution), promotes the peak knot to a budget-capped
climbing knot, and refines the saddle by bisection on flow fates: initial
states on the separatrix between the two valley basins flow into the
lowest saddle on that basin boundary, so a tight bracket plus a long flow
converges to an index<=1 critical point.  The sup-over-knots energy is
nonincreasing across sweeps by construction (dissipative knot updates,
capped climbing, guarded reinterpolation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError, SearchError
from .flows import default_tolerance, flow_step, stabilization_shift
from .functionals import SpectrumReport, first_variation, morse_index, pmc_energy
from .grid import ScalarField, inner, integrate, laplacian, pointwise_map
from .profiles import truncation_scale, truncated_profile
from .well import WellSpec, eval_well


@dataclass(frozen=True)
class PhasePath:
    """Ordered knots with strictly increasing parameters in [-1, 1]."""

    knots: tuple
    parameters: tuple

    def __post_init__(self):
        if len(self.knots) < 3:
            raise InputError("a path needs at least 3 knots")
        if len(self.knots) != len(self.parameters):
            raise InputError("one parameter per knot required")
        params = tuple(float(p) for p in self.parameters)
        if any(b <= a for a, b in zip(params, params[1:])):
            raise InputError("parameters must be strictly increasing")
        if params[0] < -1.0 - 1e-12 or params[-1] > 1.0 + 1e-12:
            raise InputError("parameters must lie in [-1, 1]")
        g = self.knots[0].grid
        if any(k.grid != g for k in self.knots):
            raise InputError("all knots must share one grid")
        object.__setattr__(self, "knots", tuple(self.knots))
        object.__setattr__(self, "parameters", params)

    def __len__(self):
        return len(self.knots)

    def mesh_constant(self):
        """Largest consecutive-knot L2 distance (continuity surrogate)."""
        return max(
            _l2_dist(a, b) for a, b in zip(self.knots, self.knots[1:])
        )


def _l2_dist(a: ScalarField, b: ScalarField):
    return math.sqrt(float(np.sum((a.values - b.values) ** 2)) * a.grid.cell_volume)


def wall_coordinate(u: ScalarField, g: ScalarField) -> float:
    """Affine coordinate  int g*u + int g ; 0 at u = -1 and 2*int g at u = +1."""
    return inner(g, u) + integrate(g)


def initial_path(a: ScalarField, b: ScalarField, eps, g: ScalarField, n_knots,
                 axis=0, w: WellSpec | None = None) -> PhasePath:
    """Monotone sweep from ``a`` to ``b`` along one coordinate circle.

    Knot ``s`` equals ``a + (b - a) * (profile(s - rho) + 1)/2`` where
    ``rho`` is the circle distance to the front nucleation point; the
    endpoints are exactly ``a`` and ``b`` because the truncated profile is
    constant beyond its plateau radius.
    """
    if n_knots < 8:
        raise InputError(f"need at least 8 knots, got {n_knots}")
    if float((b.values - a.values).min()) <= 0.0:
        raise InputError("the high endpoint must dominate the low one node-wise")
    w = w or WellSpec()
    grid = a.grid
    plateau = 2.0 * eps * truncation_scale(eps)
    L = grid.extents[axis]
    coords = grid.coords()[axis]
    rho = np.minimum(coords, L - coords)
    sweep = np.linspace(-plateau, 0.5 * L + plateau, n_knots)
    knots = []
    for s in sweep:
        arg = np.broadcast_to(s - rho, grid.dims)
        ramp = 0.5 * (truncated_profile(w, eps, arg) + 1.0)
        knots.append(a.with_values(a.values + (b.values - a.values) * ramp))
    params = np.linspace(-1.0, 1.0, n_knots)
    return PhasePath(tuple(knots), tuple(params))


@dataclass(frozen=True)
class MinmaxOptions:
    n_sweeps: int = 200
    tol: float | None = None
    dt: float | None = None
    climb_after: int = 20
    spectrum_k: int = 6
    seed_noise: float = 1e-4
    rng_seed: int = 0
    bisect_max: int = 80
    fate_steps: int = 4000
    well: WellSpec = WellSpec()


@dataclass
class MinmaxResult:
    """Converged saddle with its certificates.

    ``width`` is the max of the energy over the final path, attained at the
    saddle knot.  ``width_history`` records the sup-over-knots energy across
    the accepted string sweeps only (nonincreasing by construction); the
    initial entry is the width of the supplied path, an upper bound for the
    reported ``width``.
    """

    saddle: ScalarField
    width: float
    peak_parameter: float
    path: PhasePath
    spectrum: SpectrumReport
    wall_record: list
    width_history: list = field(default_factory=list)
    residual_sup: float = float("nan")


def mountain_pass(path0: PhasePath, eps, g: ScalarField, lam, w: WellSpec,
                  opts: MinmaxOptions | None = None) -> MinmaxResult:
    """Find an index<=1 critical point between the endpoints of ``path0``.

    Phase A relaxes the path by guarded string sweeps: every interior knot
    takes a dissipative flow step, the peak knot climbs with an ascent
    budget capped by the current width, and the knots are re-equidistributed
    in L2 arclength only when that neither raises the width nor breaks the
    continuity surrogate (twice the initial mesh).  The sup-over-knots
    energy is therefore nonincreasing across sweeps by construction.

    When the string stalls before the peak residual reaches tolerance,
    phase B bisects flow fates across the peak segment of the last valid
    path: separatrix states flow into the lowest saddle on the basin
    boundary.  Phase C rebuilds the returned path through the refined
    saddle from its unstable-manifold flows, so the final width equals the
    saddle energy exactly.
    """
    opts = opts or MinmaxOptions(well=w)
    tol = opts.tol if opts.tol is not None else default_tolerance(eps, g, lam)
    dt = opts.dt if opts.dt is not None else eps / 4.0
    kappa = stabilization_shift(w, -1.2, 1.2)
    knots = list(path0.knots)
    n = len(knots)
    rng = np.random.default_rng(opts.rng_seed)
    if opts.seed_noise > 0:
        # Deterministic symmetry breaking: the coordinate sweep is invariant
        # under translations transverse to the sweep axis and the flow
        # preserves that symmetry exactly; a tiny perturbation lets the
        # transverse instabilities of ridge states develop.
        for i in range(1, n - 1):
            noise = opts.seed_noise * rng.standard_normal(knots[i].grid.dims)
            knots[i] = knots[i].with_values(
                np.clip(knots[i].values + noise, -1.0, 1.0 + 2.0 * eps)
            )
    energies = [pmc_energy(u, eps, g, lam, w).total_F for u in knots]
    width_history = [max(energies)]
    mesh_cap = 2.0 * max(
        _l2_dist(a, b) for a, b in zip(path0.knots, path0.knots[1:])
    )
    dt_exp = 0.8 * min(0.5 * eps**2 / kappa, min(g.grid.spacing) ** 2 / (2 * g.grid.ndim))
    peak = int(np.argmax(energies))
    peak_res = float("inf")

    for sweep in range(opts.n_sweeps):
        climbing = sweep >= opts.climb_after and 0 < peak < n - 1
        for i in range(1, n - 1):
            if climbing and i == peak:
                knots[i], energies[i] = _climb_update(
                    knots[i], knots[i - 1], knots[i + 1], eps, g, lam, w,
                    dt_exp, width_history[-1], energies[i],
                )
            else:
                cand = flow_step(knots[i], eps, g, lam, dt, w, kappa=kappa)
                e = pmc_energy(cand, eps, g, lam, w).total_F
                if e <= energies[i] + 1e-12 * abs(energies[i]):
                    knots[i], energies[i] = cand, e
        peak = int(np.argmax(energies))
        cand_knots, cand_energies = _reinterpolate(
            knots, energies, eps, g, lam, w, keep=peak if climbing else None
        )
        cand_width = max(cand_energies)
        cand_mesh = max(
            _l2_dist(a, b) for a, b in zip(cand_knots, cand_knots[1:])
        )
        width_now = width_history[-1]
        if cand_width > width_now + 1e-12 * abs(width_now) or cand_mesh > mesh_cap:
            # Re-equidistribution would raise the width or break the
            # continuity surrogate: the descent has drained the path off
            # the ridge as far as the string can represent it.  Stop the
            # string phase; the fate bisection takes over from here.
            break
        knots, energies = cand_knots, cand_energies
        peak = int(np.argmax(energies))
        width_history.append(max(energies))
        if 0 < peak < n - 1:
            peak_res = first_variation(knots[peak], eps, g, lam, w).sup_norm()
            if peak_res <= tol:
                break

    if peak_res > tol:
        low, high = path0.knots[0], path0.knots[-1]
        lo_idx = _bracket_by_fates(knots, peak, eps, g, lam, w, low, high, opts, dt, kappa)
        saddle = _refine_by_fate_bisection(
            knots[lo_idx], knots[lo_idx + 1], eps, g, lam, w, low, high, tol, opts,
        )
        knots, energies = _unstable_manifold_path(
            saddle, eps, g, lam, w, low, high, mesh_cap / 2.0, opts, dt, kappa,
        )
        peak = int(np.argmax(energies))
        peak_res = first_variation(knots[peak], eps, g, lam, w).sup_norm()

    params = _arclength_parameters(knots)
    path = PhasePath(tuple(knots), tuple(params))
    saddle = knots[peak]
    spectrum = morse_index(saddle, eps, w, opts.spectrum_k)
    lam_g = pointwise_map(lambda v: lam * v, g)
    wall_record = [
        (params[i], wall_coordinate(knots[i], lam_g), energies[i])
        for i in range(len(knots))
    ]
    return MinmaxResult(
        saddle=saddle,
        width=energies[peak],
        peak_parameter=params[peak],
        path=path,
        spectrum=spectrum,
        wall_record=wall_record,
        width_history=width_history,
        residual_sup=peak_res,
    )


def _bracket_by_fates(knots, peak, eps, g, lam, w, low, high, opts, dt, kappa):
    """Index i such that knots[i] and knots[i+1] flow to different valleys."""
    n = len(knots)
    fates = {0: "low", n - 1: "high"}
    energies = (
        pmc_energy(low, eps, g, lam, w).total_F,
        pmc_energy(high, eps, g, lam, w).total_F,
    )

    def fate_of(i):
        if i not in fates:
            fates[i] = _fate(
                knots[i], eps, g, lam, w, low, high, opts.fate_steps, dt, kappa,
                energies=energies,
            )
        return fates[i]

    order = sorted(range(n - 1), key=lambda i: abs(i - peak))
    for i in order:
        if fate_of(i) == "low" and fate_of(i + 1) == "high":
            return i
    for i in range(n - 1):
        if fate_of(i) != fate_of(i + 1):
            return i
    raise SearchError("all knots flow to one valley; no wall crossed")


def _unstable_manifold_path(saddle, eps, g, lam, w, low, high, mesh_target,
                            opts, dt, kappa):
    """Rebuild a path through the saddle from its two descent trajectories.

    Seeds the flow just off the saddle along the lowest Jacobi eigenvector;
    both seeds start strictly below the saddle energy and dissipate, so the
    assembled path peaks exactly at the saddle knot.
    """
    grid = saddle.grid
    n = grid.node_count
    w2 = eval_well(w, saddle.values)[2]

    def matvec(x):
        phi = saddle.with_values(x.reshape(grid.dims))
        return (-eps * laplacian(phi).values + (w2 / eps) * phi.values).ravel()

    from scipy.sparse.linalg import LinearOperator, eigsh

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    rng = np.random.default_rng(opts.rng_seed)
    v0 = np.ones(n) + 1e-3 * rng.standard_normal(n)
    vals, vecs = eigsh(op, k=1, which="SA", v0=v0, ncv=min(n, 40))
    if vals[0] >= 0:
        raise SearchError(
            "refined critical point has no descent direction; not a saddle"
        )
    direction = vecs[:, 0].reshape(grid.dims)
    direction /= np.abs(direction).max()
    delta = 1e-4
    sides = {}
    lam_g = pointwise_map(lambda v: lam * v, g)
    coord_mid = integrate(lam_g)
    tol_valley = default_tolerance(eps, g, lam)
    for sign in (1.0, -1.0):
        u = saddle.with_values(saddle.values + sign * delta * direction)
        snaps = []
        last = u
        for _ in range(opts.fate_steps * 8):
            u = flow_step(u, eps, g, lam, dt, w, kappa=kappa)
            if _l2_dist(u, last) >= mesh_target:
                snaps.append(u)
                last = u
            if first_variation(u, eps, g, lam, w).sup_norm() <= tol_valley:
                break
        # classify the valley reached and splice the exact endpoint later
        to_low = _l2_dist(u, low) < _l2_dist(u, high)
        sides["low" if to_low else "high"] = snaps
    if "low" not in sides or "high" not in sides:
        raise SearchError("both descent trajectories reached the same valley")
    knots = (
        [low]
        + list(reversed(sides["low"]))
        + [saddle]
        + sides["high"]
        + [high]
    )
    energies = [pmc_energy(u, eps, g, lam, w).total_F for u in knots]
    return knots, energies


def _climb_update(u, left, right, eps, g, lam, w, dt_exp, width_cap, energy):
    """Transverse descent plus budget-capped ascent along the path tangent."""
    tau = right.values - left.values
    tau = tau / (np.linalg.norm(tau) + 1e-300)
    res = first_variation(u, eps, g, lam, w).values
    a = float(np.sum(res * tau))
    trans = res - a * tau
    cand = u.with_values(u.values - (dt_exp / eps) * trans)
    e_t = pmc_energy(cand, eps, g, lam, w).total_F
    if e_t > energy + 1e-12 * abs(energy):
        return u, energy
    budget = max(0.0, (width_cap - e_t) * 0.9)
    gain = (dt_exp / eps) * a * a * u.grid.cell_volume
    beta = min(1.0, budget / gain) if gain > 0 else 0.0
    if beta > 0:
        up = cand.with_values(cand.values + beta * (dt_exp / eps) * a * tau)
        e_u = pmc_energy(up, eps, g, lam, w).total_F
        if e_u <= width_cap + 1e-12 * abs(width_cap):
            return up, e_u
    return cand, e_t


def _arclength_parameters(knots):
    seg = [0.0]
    for a, b in zip(knots, knots[1:]):
        seg.append(seg[-1] + _l2_dist(a, b))
    total = seg[-1]
    n = len(knots)
    if total <= 0:
        return list(np.linspace(-1.0, 1.0, n))
    # A tiny uniform floor keeps zero-length segments strictly increasing.
    floor = total * 1e-9
    fracs = [(s + i * floor) / (total + (n - 1) * floor) for i, s in enumerate(seg)]
    return [-1.0 + 2.0 * f for f in fracs]


def _reinterpolate(knots, energies, eps, g, lam, w, keep):
    """Equidistributed candidate knots in L2 arclength (acceptance is the
    caller's decision: it checks the width and the continuity surrogate)."""

    def resample(sub):
        if len(sub) < 3:
            return sub
        seg = [0.0]
        for a, b in zip(sub, sub[1:]):
            seg.append(seg[-1] + _l2_dist(a, b))
        total = seg[-1]
        if total <= 0:
            return sub
        targets = np.linspace(0.0, total, len(sub))
        out = [sub[0]]
        j = 0
        for t in targets[1:-1]:
            while seg[j + 1] < t and j < len(sub) - 2:
                j += 1
            denom = seg[j + 1] - seg[j]
            theta = 0.0 if denom <= 0 else (t - seg[j]) / denom
            out.append(
                sub[j].with_values(
                    (1.0 - theta) * sub[j].values + theta * sub[j + 1].values
                )
            )
        out.append(sub[-1])
        return out

    if keep is None:
        candidate = resample(knots)
    else:
        candidate = (
            resample(knots[: keep + 1])[:-1] + [knots[keep]] + resample(knots[keep:])[1:]
        )
    cand_energies = [pmc_energy(u, eps, g, lam, w).total_F for u in candidate]
    return candidate, cand_energies


def _sup_dist(u, v):
    return float(np.abs(u.values - v.values).max())


def _fate(u, eps, g, lam, w, low, high, max_steps, dt, kappa, energies=None):
    """Which valley a state flows into.

    Runs the flow until the iterate visibly commits to one valley by
    sup-distance, or (faster for states that must sweep the whole torus)
    until its energy drops below the low valley's: trajectories bound for
    the low valley never do, since the flow dissipates into that state.
    """
    if energies is None:
        energies = (
            pmc_energy(low, eps, g, lam, w).total_F,
            pmc_energy(high, eps, g, lam, w).total_F,
        )
    f_low, f_high = energies
    crossing = f_low - 0.05 * (f_low - f_high)
    cur = u
    for step in range(max_steps):
        d_lo, d_hi = _sup_dist(cur, low), _sup_dist(cur, high)
        if d_lo < 0.1 and d_hi > 0.5:
            return "low"
        if d_hi < 0.1 and d_lo > 0.5:
            return "high"
        if step % 10 == 0 and f_low > f_high:
            if pmc_energy(cur, eps, g, lam, w).total_F < crossing:
                return "high"
        cur = flow_step(cur, eps, g, lam, dt, w, kappa=kappa)
    return "low" if _sup_dist(cur, low) < _sup_dist(cur, high) else "high"


def saddle_between(u_lo, u_hi, eps, g, lam, w, low, high, tol=None,
                   opts: MinmaxOptions | None = None):
    """Public wrapper for the fate-bisection saddle search between two
    states known to flow into different valleys."""
    opts = opts or MinmaxOptions(well=w)
    if tol is None:
        tol = default_tolerance(eps, g, lam)
    return _refine_by_fate_bisection(u_lo, u_hi, eps, g, lam, w, low, high, tol, opts)


def _refine_by_fate_bisection(u_lo, u_hi, eps, g, lam, w, low, high, tol,
                              opts: MinmaxOptions):
    """Converge to the saddle on the basin boundary between two states.

    Bisects the linear segment [u_lo, u_hi] on flow fate, then flows the
    tightest bracket midpoint: it shadows the separatrix, which flows into
    the lowest saddle on the basin boundary.  The minimum-residual iterate
    is tracked only while the state has not committed to a valley (the
    residual also vanishes there, which would be a false accept).
    """
    dt = eps / 4.0
    kappa = stabilization_shift(w, -1.2, 1.2)

    def at(theta):
        return u_lo.with_values((1.0 - theta) * u_lo.values + theta * u_hi.values)

    energies = (
        pmc_energy(low, eps, g, lam, w).total_F,
        pmc_energy(high, eps, g, lam, w).total_F,
    )
    f_lo = _fate(u_lo, eps, g, lam, w, low, high, opts.fate_steps, dt, kappa, energies)
    f_hi = _fate(u_hi, eps, g, lam, w, low, high, opts.fate_steps, dt, kappa, energies)
    if f_lo == f_hi:
        raise SearchError(
            "bracket states flow to the same valley; no separatrix crossed"
        )
    if f_lo == "high":
        u_lo, u_hi = u_hi, u_lo
    lo, hi = 0.0, 1.0
    for _ in range(opts.bisect_max):
        mid = 0.5 * (lo + hi)
        f_mid = _fate(at(mid), eps, g, lam, w, low, high, opts.fate_steps, dt, kappa,
                      energies)
        if f_mid == "low":
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    cur = at(0.5 * (lo + hi))
    best, best_res = None, float("inf")
    for _ in range(opts.fate_steps * 8):
        cur = flow_step(cur, eps, g, lam, dt, w, kappa=kappa)
        if min(_sup_dist(cur, low), _sup_dist(cur, high)) < 0.25:
            break
        res = first_variation(cur, eps, g, lam, w).sup_norm()
        if res < best_res:
            best, best_res = cur, res
        if best_res <= tol:
            return best
    if best is not None and best_res <= tol:
        return best
    raise NumericError(
        f"saddle refinement stalled at residual {best_res:.3e} (tol {tol:.3e})",
        payload=best,
    )


@dataclass(frozen=True)
class WallReport:
    delta_probe: float
    band: float
    count_in_band: int
    min_F_in_band: float
    threshold: float

    @property
    def passes(self):
        if self.count_in_band == 0:
            return None  # diagnostic warning: no knot in the band
        return self.min_F_in_band > self.threshold


def verify_wall(result: MinmaxResult, g_forcing: ScalarField, delta_probe,
                band=None) -> WallReport:
    """Minimum path energy near a wall coordinate value vs. the low-phase energy.

    ``g_forcing`` must be the same (lam-scaled) field the wall record was
    built with.
    """
    total = 2.0 * integrate(g_forcing)
    if band is None:
        band = 0.05 * total
    threshold = integrate(g_forcing)
    in_band = [rec for rec in result.wall_record if abs(rec[1] - delta_probe) <= band]
    min_F = min((rec[2] for rec in in_band), default=float("inf"))
    return WallReport(
        delta_probe=float(delta_probe),
        band=float(band),
        count_in_band=len(in_band),
        min_F_in_band=float(min_F),
        threshold=float(threshold),
    )
