"""Interface diagnostics: energy measure, zero-set extraction, curvature
against the prescribing field, multiplicity, and phase bookkeeping.

The normalized energy density ``(2*sigma)^-1 (eps |grad u|^2 / 2 + W(u)/eps)``
concentrates on interfaces with one unit of mass per unit length per sheet,
so tube masses around extracted arcs give integer multiplicity estimates.
Zero sets are extracted by marching squares with linear interpolation,
stitched across the periodic boundaries into closed polylines; curvature
is estimated per vertex by an osculating-circle least-squares fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import InputError
from .functionals import ac_energy, stability_form
from .grid import ScalarField
from .profiles import truncation_scale
from .well import WellSpec, eval_well, sigma_constant


@dataclass(frozen=True)
class MeasureReport:
    """Normalized energy measure: density field and total mass."""

    density: ScalarField
    total_mass: float
    eps: float
    normalization: float  # 2*sigma

    def mass_in_ball(self, center, radius):
        grid = self.density.grid
        coords = grid.coords()
        r2 = np.zeros(grid.dims)
        for axis in range(grid.ndim):
            r2 = r2 + grid.min_image(coords[axis] - center[axis], axis) ** 2
        inside = r2 <= radius**2
        return float(self.density.values[inside].sum()) * grid.cell_volume

    def ball_ratios(self, centers, radii):
        """Mass per ball diameter at sampled centers and radii."""
        return [
            (c, r, self.mass_in_ball(c, r) / (2.0 * r)) for c in centers for r in radii
        ]


def energy_measure(u: ScalarField, eps, w: WellSpec) -> MeasureReport:
    two_sigma = 2.0 * sigma_constant(w)
    wvals = eval_well(w, u.values)[0]
    from .grid import gradient_sq

    density = (0.5 * eps * gradient_sq(u).values + wvals / eps) / two_sigma
    rep = ac_energy(u, eps, w)
    return MeasureReport(
        density=u.with_values(density),
        total_mass=rep.total_E / two_sigma,
        eps=eps,
        normalization=two_sigma,
    )


@dataclass(frozen=True)
class Polyline:
    """Closed zero-set component: vertices, per-vertex normals pointing into
    the positive phase, and the side phases along/against the normal."""

    points: np.ndarray
    normals: np.ndarray
    length: float

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class InterfaceGeometry:
    polylines: tuple
    crossings: tuple = ()  # d=1: (position, direction) pairs

    @property
    def total_length(self):
        return sum(p.length for p in self.polylines)

    @property
    def empty(self):
        return len(self.polylines) == 0 and len(self.crossings) == 0


def _segment_table(signs, center_positive):
    """Crossed-edge pairs for one cell; edges are 'B','R','T','L'."""
    b00, b10, b01, b11 = signs
    crossed = []
    if b00 != b10:
        crossed.append("B")
    if b10 != b11:
        crossed.append("R")
    if b01 != b11:
        crossed.append("T")
    if b00 != b01:
        crossed.append("L")
    if len(crossed) == 0:
        return []
    if len(crossed) == 2:
        return [tuple(crossed)]
    # saddle cell: pair the edges around the isolated corners
    if (b00 and b11) and not (b10 or b01):
        return [("B", "R"), ("T", "L")] if not center_positive else [("B", "L"), ("R", "T")]
    if (b10 and b01) and not (b00 or b11):
        return [("B", "L"), ("R", "T")] if not center_positive else [("B", "R"), ("T", "L")]
    return []  # degenerate; skipped


def extract_interface(u: ScalarField) -> InterfaceGeometry:
    """Zero level set of ``u`` with linear interpolation, periodic stitching.

    Supports d=1 (crossing positions) and d=2 (closed polylines); a 3-d
    field raises :class:`InputError`.
    """
    grid = u.grid
    if grid.ndim == 3:
        raise InputError("interface extraction supports d in {1, 2} only")
    v = u.values.copy()
    tiny = 1e-14 * max(1.0, float(np.abs(v).max()))
    v[v == 0.0] = tiny
    if grid.ndim == 1:
        n = grid.dims[0]
        h = grid.spacing[0]
        crossings = []
        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            if (a > 0) != (b > 0):
                t = a / (a - b)
                crossings.append(((i + t) * h, 1 if b > a else -1))
        return InterfaceGeometry(polylines=(), crossings=tuple(crossings))

    n0, n1 = grid.dims
    h0, h1 = grid.spacing
    pos = v > 0
    cross_point = {}

    def edge_point(kind, i, j):
        key = (kind, i, j)
        if key in cross_point:
            return cross_point[key]
        if kind == "h":
            a, b = v[i, j], v[(i + 1) % n0, j]
            t = a / (a - b)
            p = ((i + t) * h0, j * h1)
        else:
            a, b = v[i, j], v[i, (j + 1) % n1]
            t = a / (a - b)
            p = (i * h0, (j + t) * h1)
        cross_point[key] = p
        return p

    edge_ids = {
        "B": lambda i, j: ("h", i, j),
        "T": lambda i, j: ("h", i, (j + 1) % n1),
        "L": lambda i, j: ("v", i, j),
        "R": lambda i, j: ("v", (i + 1) % n0, j),
    }
    adjacency = {}
    for i in range(n0):
        ip = (i + 1) % n0
        for j in range(n1):
            jp = (j + 1) % n1
            signs = (pos[i, j], pos[ip, j], pos[i, jp], pos[ip, jp])
            if signs[0] == signs[1] == signs[2] == signs[3]:
                continue
            center = v[i, j] + v[ip, j] + v[i, jp] + v[ip, jp]
            for e1, e2 in _segment_table(signs, center > 0):
                id1, id2 = edge_ids[e1](i, j), edge_ids[e2](i, j)
                adjacency.setdefault(id1, []).append(id2)
                adjacency.setdefault(id2, []).append(id1)

    # Walk closed cycles through the edge adjacency.
    polylines = []
    visited = set()
    for start in sorted(adjacency):
        if start in visited or len(adjacency[start]) != 2:
            continue
        cycle = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            nxts = [e for e in adjacency[cur] if e != prev]
            if not nxts:
                break
            nxt = nxts[0]
            if nxt == start:
                break
            if nxt in visited:
                break
            cycle.append(nxt)
            visited.add(nxt)
            prev, cur = cur, nxt
        if len(cycle) >= 3:
            pts = np.array([edge_point(*eid) for eid in cycle])
            polylines.append(_finalize_polyline(u, pts))
    return InterfaceGeometry(polylines=tuple(polylines))


def _finalize_polyline(u: ScalarField, pts):
    grid = u.grid

    def tangents_and_length(points):
        n = len(points)
        length = 0.0
        tangents = np.zeros_like(points)
        for k in range(n):
            nxt = points[(k + 1) % n]
            prv = points[(k - 1) % n]
            step = np.array(
                [grid.min_image(nxt[a] - points[k][a], a) for a in range(2)]
            )
            back = np.array(
                [grid.min_image(points[k][a] - prv[a], a) for a in range(2)]
            )
            length += math.hypot(*step)
            t = step + back
            norm = math.hypot(*t)
            tangents[k] = t / norm if norm > 0 else (1.0, 0.0)
        return tangents, length

    tangents, length = tangents_and_length(pts)
    # Canonical orientation: the positive phase lies to the left of the
    # traversal, so the left normal points into it.  A sign flip of the
    # field therefore reverses both traversal and normals.
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    probe = 0.75 * min(grid.spacing)
    ahead = _bilinear(u, pts + probe * normals)
    behind = _bilinear(u, pts - probe * normals)
    if np.sum(ahead - behind) < 0.0:
        pts = pts[::-1].copy()
        tangents, length = tangents_and_length(pts)
        normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    return Polyline(points=pts, normals=normals, length=length)


def _bilinear(u: ScalarField, pts):
    grid = u.grid
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        idx = []
        frac = []
        for a in range(grid.ndim):
            x = (p[a] / grid.spacing[a]) % grid.dims[a]
            i = int(math.floor(x))
            idx.append(i)
            frac.append(x - i)
        (i, j), (fx, fy) = idx, frac
        n0, n1 = grid.dims
        out[k] = (
            u.values[i, j] * (1 - fx) * (1 - fy)
            + u.values[(i + 1) % n0, j] * fx * (1 - fy)
            + u.values[i, (j + 1) % n1] * (1 - fx) * fy
            + u.values[(i + 1) % n0, (j + 1) % n1] * fx * fy
        )
    return out


@dataclass(frozen=True)
class CurvatureReport:
    median_ratio: float
    iqr_ratio: float
    median_curvature: float
    per_vertex: tuple
    skipped: int


def curvature_vs_g(geom: InterfaceGeometry, g: ScalarField, lam, sigma,
                   expected_radius=None) -> CurvatureReport:
    """Per-vertex curvature over the prescribed value ``lam*g/sigma``.

    Osculating circles are fit by least squares over a window of vertices
    sized to the expected radius; vertices with degenerate fits are
    skipped and counted.
    """
    grid = g.grid
    h = max(grid.spacing)
    ratios, kappas = [], []
    skipped = 0
    for poly in geom.polylines:
        n = len(poly)
        if n < 8:
            skipped += n
            continue
        radius_guess = expected_radius or poly.length / (2.0 * math.pi)
        wsize = max(5, int(round(radius_guess / (4.0 * h))))
        wsize = min(wsize, (n - 1) // 2)
        prescribed = lam * _bilinear(g, poly.points) / sigma
        for k in range(n):
            window = [(k + m) % n for m in range(-wsize, wsize + 1)]
            pts = poly.points[window]
            rel = np.stack(
                [grid.min_image(pts[:, a] - poly.points[k][a], a) for a in range(2)],
                axis=1,
            )
            kappa = _fit_circle_curvature(rel)
            if kappa is None:
                skipped += 1
                continue
            # sign: positive when curving toward the positive phase
            kappas.append(kappa)
            if prescribed[k] > 0:
                ratios.append(kappa / prescribed[k])
    if not kappas:
        return CurvatureReport(float("nan"), float("nan"), float("nan"), (), skipped)
    ratios_arr = np.asarray(ratios if ratios else kappas)
    q1, q2, q3 = np.percentile(ratios_arr, [25, 50, 75])
    return CurvatureReport(
        median_ratio=float(q2),
        iqr_ratio=float(q3 - q1),
        median_curvature=float(np.median(np.abs(kappas))),
        per_vertex=tuple(kappas),
        skipped=skipped,
    )


def _fit_circle_curvature(rel):
    """Unsigned curvature from an algebraic circle fit; None when degenerate.

    Collinear windows are detected first (the algebraic fit would return a
    spurious circle through nearly-collinear data) and report curvature 0.
    """
    x, y = rel[:, 0], rel[:, 1]
    span = math.hypot(x.max() - x.min(), y.max() - y.min())
    if span <= 0:
        return None
    centered = rel - rel.mean(axis=0)
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    transverse = np.abs(centered @ evecs[:, 0])
    if transverse.max() <= 1e-9 * span:
        return 0.0
    A = np.stack([2.0 * x, 2.0 * y, np.ones_like(x)], axis=1)
    b = x * x + y * y
    try:
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    except np.linalg.LinAlgError:
        return None
    a0, b0, c0 = sol
    r2 = c0 + a0 * a0 + b0 * b0
    if not np.isfinite(r2) or r2 <= 0:
        return None
    radius = math.sqrt(r2)
    # the fitted circle must actually explain the transverse deviation:
    # sagitta of the chord vs the observed bulge
    sagitta = radius - math.sqrt(max(radius**2 - (span / 2.0) ** 2, 0.0))
    if sagitta > 8.0 * transverse.max() + 1e-12:
        return 0.0
    return 1.0 / radius


@dataclass(frozen=True)
class ArcMultiplicity:
    arc_index: int
    mass: float
    length: float
    estimate: int
    reliable: bool


def multiplicity_estimate(report: MeasureReport, geom: InterfaceGeometry):
    """Integer sheet-count estimates: tube mass per unit arc length.

    The tube radius is ``6 eps |log eps| * 3``-scaled to just exceed the
    profile support; arcs whose tubes overlap are flagged unreliable.
    """
    if geom.empty:
        return []
    grid = report.density.grid
    eps = report.eps
    tube = 6.0 * eps * truncation_scale(eps)
    coords = grid.coords()
    nodes = np.stack(
        [np.broadcast_to(coords[a], grid.dims).ravel() for a in range(grid.ndim)],
        axis=1,
    )
    owners = []
    for poly in geom.polylines:
        pts = _densify(grid, poly.points)
        images = []
        for shift in np.ndindex(*(3,) * grid.ndim):
            offset = np.array(
                [(s - 1) * grid.extents[a] for a, s in enumerate(shift)]
            )
            images.append(pts + offset)
        tree = cKDTree(np.concatenate(images))
        dist, _ = tree.query(nodes, k=1)
        owners.append(dist.reshape(grid.dims) <= tube)
    overlap = np.zeros(grid.dims, dtype=int)
    for mask in owners:
        overlap += mask.astype(int)
    out = []
    for idx, (poly, mask) in enumerate(zip(geom.polylines, owners)):
        mass = float(report.density.values[mask].sum()) * grid.cell_volume
        est = int(round(mass / poly.length)) if poly.length > 0 else 0
        reliable = not bool((overlap[mask] > 1).any())
        out.append(
            ArcMultiplicity(
                arc_index=idx,
                mass=mass,
                length=poly.length,
                estimate=est,
                reliable=reliable,
            )
        )
    return out


def _densify(grid, pts, factor=3):
    """Refine polyline vertices so tube queries resolve segment interiors."""
    out = []
    n = len(pts)
    for k in range(n):
        a, b = pts[k], pts[(k + 1) % n]
        step = np.array([grid.min_image(b[i] - a[i], i) for i in range(2)])
        for m in range(factor):
            out.append((a + step * (m / factor)) % np.array(grid.extents))
    return np.asarray(out)


@dataclass(frozen=True)
class PhaseComponent:
    label: int
    sign: int
    volume: float


@dataclass(frozen=True)
class PhaseReport:
    components: tuple
    positive_volume: float
    negative_volume: float
    threshold: float


def phase_classify(u: ScalarField, threshold=0.0) -> PhaseReport:
    """Connected components of the two phases, with periodic wrapping."""
    grid = u.grid
    comps = []
    pos_vol = neg_vol = 0.0
    for sign in (1, -1):
        mask = u.values > threshold if sign > 0 else u.values < threshold
        labels, count = ndimage.label(mask)
        labels = _merge_periodic(labels, mask)
        for lab in np.unique(labels):
            if lab == 0:
                continue
            vol = float((labels == lab).sum()) * grid.cell_volume
            comps.append(PhaseComponent(label=int(lab), sign=sign, volume=vol))
            if sign > 0:
                pos_vol += vol
            else:
                neg_vol += vol
    return PhaseReport(
        components=tuple(comps),
        positive_volume=pos_vol,
        negative_volume=neg_vol,
        threshold=threshold,
    )


def _merge_periodic(labels, mask):
    """Union labels that touch across periodic faces."""
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            parent[x] = parent.get(parent[x], parent[x])
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    nd = labels.ndim
    for axis in range(nd):
        lo = np.take(labels, 0, axis=axis)
        hi = np.take(labels, -1, axis=axis)
        both = (np.take(mask, 0, axis=axis)) & (np.take(mask, -1, axis=axis))
        for a, b in zip(np.atleast_1d(lo)[np.atleast_1d(both)].ravel(),
                        np.atleast_1d(hi)[np.atleast_1d(both)].ravel()):
            if a > 0 and b > 0:
                union(int(a), int(b))
    if not parent:
        return labels
    out = labels.copy()
    for lab in np.unique(labels):
        if lab > 0:
            out[labels == lab] = find(int(lab))
    return out


@dataclass(frozen=True)
class StabilityCheck:
    values: tuple
    min_value: float


def stability_quadratic_check(u: ScalarField, eps, w: WellSpec, battery) -> StabilityCheck:
    """Evaluate the stability quadratic form on every battery field."""
    vals = tuple(stability_form(u, eps, w, phi) for phi in battery)
    return StabilityCheck(values=vals, min_value=min(vals))
