"""Experiment configuration, orchestration, and persistence.

Configs are flat INI-style text (``[section]`` headers, ``key = value``
lines, ``#`` comments).  The forcing may be a constant, a file, or an
expression in a tiny arithmetic grammar over ``x``, ``y``, numeric
literals, ``pi``, ``sin``, ``cos`` and ``exp``.  A run writes its
artifacts into the output directory and finishes by writing
``manifest.json`` (the completion marker: no manifest means the run did
not complete; on a stage error the manifest carries the failure record
and partial artifacts are preserved).

Runs are deterministic for a fixed config: fixed seeds, closed-form
kernels, and bit-stable field files.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import diagnostics, minmax, recovery
from .errors import ConfigError, InputError, PmcfError
from .flows import flow_to_stationary, valley_points
from .functionals import EnergyReport, morse_index, pmc_energy
from .grid import ScalarField, TorusGrid, constant_field, load_field, save_field
from .profiles import Profile1D, profile_energy
from .well import WellSpec, sigma_constant

SCENARIOS = (
    "profile",
    "energy",
    "spectrum",
    "relax",
    "minmax",
    "construct",
    "diagnose",
    "full-pipeline",
)


# ---------------------------------------------------------------------------
# Tiny expression grammar:  expr := term (('+'|'-') term)* ;
# term := factor (('*'|'/') factor)* ; factor := ['-'] atom ;
# atom := number | 'pi' | 'x' | 'y' | func '(' expr ')' | '(' expr ')'.


class _Expr:
    FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.tree = self._expr()
        self._skip()
        if self.pos != len(text):
            raise ConfigError(f"trailing input in expression: {text[self.pos:]!r}")

    def _skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self):
        self._skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expr(self):
        node = self._term()
        while self._peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            rhs = self._term()
            node = (op, node, rhs)
        return node

    def _term(self):
        node = self._factor()
        while self._peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            rhs = self._factor()
            node = (op, node, rhs)
        return node

    def _factor(self):
        if self._peek() == "-":
            self.pos += 1
            return ("neg", self._factor())
        return self._atom()

    def _atom(self):
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            node = self._expr()
            if self._peek() != ")":
                raise ConfigError("unbalanced parenthesis in expression")
            self.pos += 1
            return node
        if ch.isdigit() or ch == ".":
            start = self.pos
            while self.pos < len(self.text) and (
                self.text[self.pos].isdigit() or self.text[self.pos] in ".eE"
                or (self.text[self.pos] in "+-" and self.text[self.pos - 1] in "eE")
            ):
                self.pos += 1
            try:
                return ("num", float(self.text[start : self.pos]))
            except ValueError as exc:
                raise ConfigError(f"bad number {self.text[start:self.pos]!r}") from exc
        if ch.isalpha():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isalnum():
                self.pos += 1
            name = self.text[start : self.pos]
            if name == "pi":
                return ("num", math.pi)
            if name in ("x", "y"):
                return ("var", name)
            if name in self.FUNCS:
                if self._peek() != "(":
                    raise ConfigError(f"{name} needs parentheses")
                self.pos += 1
                node = self._expr()
                if self._peek() != ")":
                    raise ConfigError("unbalanced parenthesis in expression")
                self.pos += 1
                return ("call", name, node)
            raise ConfigError(f"unknown name {name!r} in expression")
        raise ConfigError(f"unexpected character {ch!r} in expression")

    def evaluate(self, x, y=None):
        def ev(node):
            tag = node[0]
            if tag == "num":
                return node[1]
            if tag == "var":
                if node[1] == "y" and y is None:
                    raise ConfigError("expression uses y on a 1-d grid")
                return x if node[1] == "x" else y
            if tag == "neg":
                return -ev(node[1])
            if tag == "call":
                return self.FUNCS[node[1]](ev(node[2]))
            a, b = ev(node[1]), ev(node[2])
            if tag == "+":
                return a + b
            if tag == "-":
                return a - b
            if tag == "*":
                return a * b
            return a / b

        return ev(self.tree)


@dataclass
class ExperimentConfig:
    grid_dims: tuple = (64, 64)
    grid_extents: tuple = (2.0, 2.0)
    well: WellSpec = dc_field(default_factory=WellSpec)
    eps_schedule: tuple = (0.1,)
    g_kind: str = "constant"        # constant | expr | file
    g_value: str = "1.0"
    g_shift: float = 0.0
    g_mollify: float = 0.0
    lam: float | None = None        # None means the surface-tension constant
    scenario: str = "relax"
    interface_axis: int = 1
    interface_offset: float | None = None
    window_centers: tuple = ()
    window_radius: float = 0.0
    tol: float | None = None
    max_steps: int = 200_000
    dt: float | None = None
    n_knots: int = 32
    seed: int = 0
    spectrum_k: int = 6
    target_fraction: float = 0.8
    knots_per_stage: int = 8
    input_field: str | None = None
    initial: str = "constant -1"
    profile_kind: str = "truncated"
    profile_shift: float = 0.0
    output_dir: str = "out"

    def resolved_lam(self):
        return sigma_constant(self.well) if self.lam is None else self.lam

    def grid(self):
        return TorusGrid(self.grid_dims, self.grid_extents)

    def forcing(self, grid=None):
        grid = grid or self.grid()
        if self.g_kind == "constant":
            base = constant_field(grid, float(self.g_value))
        elif self.g_kind == "expr":
            expr = _Expr(self.g_value)
            coords = grid.coords()
            x = np.broadcast_to(coords[0], grid.dims)
            y = np.broadcast_to(coords[1], grid.dims) if grid.ndim > 1 else None
            base = ScalarField(grid, np.asarray(expr.evaluate(x, y), dtype=float) * np.ones(grid.dims))
        else:
            base = load_field(self.g_value, expected_grid=grid)
        shifted = base.with_values(base.values + self.g_shift)
        if self.g_mollify > 0:
            shifted = recovery.mollify(shifted, self.g_mollify)
        if shifted.min() < 0:
            raise ConfigError(
                f"forcing is negative (min {shifted.min():.4g}) after shift; "
                "increase g_shift"
            )
        return shifted

    def interface_spec(self):
        grid = self.grid()
        offset = self.interface_offset
        if offset is None:
            offset = grid.extents[self.interface_axis] / 2.0
        windows = tuple(
            recovery.Window(center=c, radius=self.window_radius)
            for c in self.window_centers
        )
        return recovery.InterfaceSpec(
            kind="line",
            normal_axis=self.interface_axis,
            offset=offset,
            windows=windows,
        )

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for eps in self.eps_schedule:
            if not (0 < eps < 1):
                raise ConfigError(f"eps must lie in (0,1), got {eps}")
        if self.scenario in ("construct", "full-pipeline"):
            grid = self.grid()
            if grid.ndim != 2:
                raise ConfigError("construct scenarios require a 2-d grid")
            omega = grid.extents[self.interface_axis] / 2.0
            for eps in self.eps_schedule:
                gate = 12.0 * eps * abs(math.log(eps))
                if not (gate < min(omega, 1.0)):
                    raise ConfigError(
                        f"smallness gate failed: 12*eps*|log eps| = {gate:.4g} "
                        f"must be below min(tube width, 1) = {min(omega, 1.0):.4g}"
                    )
            if len(self.window_centers) != 2 or self.window_radius <= 0:
                raise ConfigError(
                    "construct scenarios need window_centers (two) and window_radius"
                )
        return self


_KEY_TYPES = {
    ("grid", "dims"): "ints",
    ("grid", "extents"): "floats",
    ("well", "family"): "str",
    ("well", "coefficients"): "floats",
    ("problem", "eps"): "floats",
    ("problem", "g"): "gspec",
    ("problem", "g_shift"): "float",
    ("problem", "g_mollify"): "float",
    ("problem", "lam"): "lam",
    ("scenario", "scenario"): "str",
    ("scenario", "interface_axis"): "int",
    ("scenario", "interface_offset"): "float",
    ("scenario", "window_centers"): "floats",
    ("scenario", "window_radius"): "float",
    ("solver", "tol"): "auto_float",
    ("solver", "max_steps"): "int",
    ("solver", "dt"): "auto_float",
    ("solver", "n_knots"): "int",
    ("solver", "seed"): "int",
    ("solver", "spectrum_k"): "int",
    ("solver", "target_fraction"): "float",
    ("solver", "knots_per_stage"): "int",
    ("input", "field"): "str",
    ("input", "initial"): "str",
    ("profile", "kind"): "str",
    ("profile", "shift"): "float",
    ("output", "dir"): "str",
}

_KEY_DEST = {
    ("grid", "dims"): "grid_dims",
    ("grid", "extents"): "grid_extents",
    ("problem", "eps"): "eps_schedule",
    ("problem", "g_shift"): "g_shift",
    ("problem", "g_mollify"): "g_mollify",
    ("problem", "lam"): "lam",
    ("scenario", "scenario"): "scenario",
    ("scenario", "interface_axis"): "interface_axis",
    ("scenario", "interface_offset"): "interface_offset",
    ("scenario", "window_centers"): "window_centers",
    ("scenario", "window_radius"): "window_radius",
    ("solver", "tol"): "tol",
    ("solver", "max_steps"): "max_steps",
    ("solver", "dt"): "dt",
    ("solver", "n_knots"): "n_knots",
    ("solver", "seed"): "seed",
    ("solver", "spectrum_k"): "spectrum_k",
    ("solver", "target_fraction"): "target_fraction",
    ("solver", "knots_per_stage"): "knots_per_stage",
    ("input", "field"): "input_field",
    ("input", "initial"): "initial",
    ("profile", "kind"): "profile_kind",
    ("profile", "shift"): "profile_shift",
    ("output", "dir"): "output_dir",
}


def parse_config(text) -> ExperimentConfig:
    """Parse and validate the flat INI-style configuration text."""
    cfg = ExperimentConfig()
    section = None
    well_family, well_coeffs = "standard", None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if all(s != section for s, _ in _KEY_TYPES):
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line=lineno)
        if section is None:
            raise ConfigError("key outside any [section]", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        kind = _KEY_TYPES.get((section, key.lower()))
        if kind is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", line=lineno)
        try:
            parsed = _parse_value(kind, value)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line=lineno) from exc
        if (section, key.lower()) == ("well", "family"):
            well_family = parsed
        elif (section, key.lower()) == ("well", "coefficients"):
            well_coeffs = parsed
        elif (section, key.lower()) == ("problem", "g"):
            cfg.g_kind, cfg.g_value = parsed
        else:
            setattr(cfg, _KEY_DEST[(section, key.lower())], parsed)
    try:
        if well_coeffs is not None:
            cfg.well = WellSpec("custom", tuple(well_coeffs))
        else:
            cfg.well = WellSpec(well_family)
    except InputError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def _parse_value(kind, value):
    if kind == "str":
        return value
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "auto_float":
        return None if value.lower() == "auto" else float(value)
    if kind == "lam":
        return None if value.lower() == "sigma" else float(value)
    if kind == "ints":
        return tuple(int(v) for v in value.split())
    if kind == "floats":
        return tuple(float(v) for v in value.split())
    if kind == "gspec":
        parts = value.split(None, 1)
        if len(parts) != 2 or parts[0] not in ("constant", "expr", "file"):
            raise ConfigError(
                "forcing must be 'constant <v>', 'expr <expression>' or 'file <path>'"
            )
        if parts[0] == "constant":
            float(parts[1])
        elif parts[0] == "expr":
            _Expr(parts[1])
        return (parts[0], parts[1])
    raise ConfigError(f"internal: unknown value kind {kind}")


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Orchestration.


@dataclass
class RunManifest:
    config_echo: dict
    versions: dict
    artifacts: dict = dc_field(default_factory=dict)
    constants: dict = dc_field(default_factory=dict)
    wall_clock: dict = dc_field(default_factory=dict)
    status: str = "incomplete"
    failure: str | None = None
    path: str | None = None

    def write(self, outdir):
        payload = {
            "config": self.config_echo,
            "versions": self.versions,
            "artifacts": self.artifacts,
            "constants": self.constants,
            "wall_clock_s": self.wall_clock,
            "status": self.status,
            "failure": self.failure,
        }
        self.path = os.path.join(outdir, "manifest.json")
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=repr)
        return self.path


class _Stage:
    """Context helper recording wall-clock per stage."""

    def __init__(self, manifest, name):
        self.manifest = manifest
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.wall_clock[self.name] = time.perf_counter() - self.start
        return False


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def run_experiment(cfg: ExperimentConfig, outdir=None) -> RunManifest:
    """Execute the configured scenario; write artifacts and the manifest."""
    cfg.validate()
    root = os.environ.get("PMCF_OUTPUT_ROOT", "")
    outdir = outdir or os.path.join(root, cfg.output_dir) if root else (outdir or cfg.output_dir)
    os.makedirs(outdir, exist_ok=True)
    manifest = RunManifest(
        config_echo={k: repr(v) for k, v in vars(cfg).items()},
        versions={"numpy": np.__version__},
    )
    try:
        _dispatch(cfg, outdir, manifest)
        manifest.status = "completed"
    except PmcfError as exc:
        manifest.status = "failed"
        manifest.failure = f"{type(exc).__name__}: {exc}"
        manifest.write(outdir)
        raise
    manifest.write(outdir)
    return manifest


def _dispatch(cfg, outdir, manifest):
    handlers = {
        "profile": _run_profile,
        "energy": _run_energy,
        "spectrum": _run_spectrum,
        "relax": _run_relax,
        "minmax": _run_minmax,
        "construct": _run_construct,
        "diagnose": _run_diagnose,
        "full-pipeline": _run_full,
    }
    handlers[cfg.scenario](cfg, outdir, manifest)


def _load_input_field(cfg, grid):
    if cfg.input_field:
        return load_field(cfg.input_field, expected_grid=grid)
    parts = cfg.initial.split(None, 1)
    if parts[0] == "constant":
        return constant_field(grid, float(parts[1]))
    if parts[0] == "expr":
        expr = _Expr(parts[1])
        coords = grid.coords()
        x = np.broadcast_to(coords[0], grid.dims)
        y = np.broadcast_to(coords[1], grid.dims) if grid.ndim > 1 else None
        return ScalarField(grid, np.asarray(expr.evaluate(x, y), dtype=float) * np.ones(grid.dims))
    raise ConfigError(f"unknown initial spec {cfg.initial!r}")


def _run_profile(cfg, outdir, manifest):
    for eps in cfg.eps_schedule:
        with _Stage(manifest, f"profile eps={eps}"):
            prof = Profile1D(cfg.profile_kind, cfg.well, eps, cfg.profile_shift)
            A = prof.support_halfwidth * 1.1 + eps
            rs = np.linspace(-A, A, 2001)
            vals = np.asarray(prof(rs))
            dens = prof.energy_density(rs)
            rows = [f"{r!r},{v!r},{d!r}" for r, v, d in zip(rs, vals, dens)]
            path = os.path.join(outdir, f"profile_eps{eps}.csv")
            _write_csv(path, "r,value,energy_density", rows)
            manifest.artifacts[f"profile eps={eps}"] = path
            manifest.constants[f"profile_energy eps={eps}"] = profile_energy(prof)


def _run_energy(cfg, outdir, manifest):
    grid = cfg.grid()
    u = _load_input_field(cfg, grid)
    g = cfg.forcing(grid)
    lam = cfg.resolved_lam()
    rows = []
    for eps in cfg.eps_schedule:
        rep = pmc_energy(u, eps, g, lam, cfg.well)
        rows.append(rep.csv_row())
    path = os.path.join(outdir, "energy.csv")
    _write_csv(path, EnergyReport.csv_header, rows)
    manifest.artifacts["energy"] = path


def _run_spectrum(cfg, outdir, manifest):
    grid = cfg.grid()
    u = _load_input_field(cfg, grid)
    for eps in cfg.eps_schedule:
        with _Stage(manifest, f"spectrum eps={eps}"):
            rep = morse_index(u, eps, cfg.well, cfg.spectrum_k)
            path = os.path.join(outdir, f"spectrum_eps{eps}.csv")
            _write_csv(path, "index,eigenvalue,residual", rep.csv_rows())
            manifest.artifacts[f"spectrum eps={eps}"] = path
            manifest.constants[f"negative_count eps={eps}"] = rep.negative_count


def _run_relax(cfg, outdir, manifest):
    grid = cfg.grid()
    g = cfg.forcing(grid)
    lam = cfg.resolved_lam()
    u = _load_input_field(cfg, grid)
    for eps in cfg.eps_schedule:
        with _Stage(manifest, f"relax eps={eps}"):
            final, trace = flow_to_stationary(
                u, eps, g, lam, cfg.well, tol=cfg.tol, max_steps=cfg.max_steps,
                dt=cfg.dt,
            )
            fpath = os.path.join(outdir, f"relaxed_eps{eps}.pmcf")
            save_field(fpath, final)
            tpath = os.path.join(outdir, f"trace_eps{eps}.csv")
            _write_csv(tpath, trace.csv_header, trace.csv_rows())
            manifest.artifacts[f"relaxed eps={eps}"] = fpath
            manifest.artifacts[f"trace eps={eps}"] = tpath
            manifest.constants[f"final_F eps={eps}"] = trace.final.total_F


def _minmax_once(cfg, outdir, manifest, eps):
    grid = cfg.grid()
    g = cfg.forcing(grid)
    lam = cfg.resolved_lam()
    with _Stage(manifest, f"valleys eps={eps}"):
        low, high, barrier = valley_points(eps, g, lam, cfg.well, tol=cfg.tol)
    manifest.constants[f"barrier_c eps={eps}"] = barrier.c
    path0 = minmax.initial_path(low, high, eps, g, cfg.n_knots, w=cfg.well)
    opts = minmax.MinmaxOptions(
        tol=cfg.tol, rng_seed=cfg.seed, spectrum_k=cfg.spectrum_k, well=cfg.well,
    )
    with _Stage(manifest, f"mountain-pass eps={eps}"):
        result = minmax.mountain_pass(path0, eps, g, lam, cfg.well, opts)
    spath = os.path.join(outdir, f"saddle_eps{eps}.pmcf")
    save_field(spath, result.saddle)
    wpath = os.path.join(outdir, f"width_history_eps{eps}.csv")
    _write_csv(wpath, "sweep,width", [f"{i},{v!r}" for i, v in enumerate(result.width_history)])
    specpath = os.path.join(outdir, f"saddle_spectrum_eps{eps}.csv")
    _write_csv(specpath, "index,eigenvalue,residual", result.spectrum.csv_rows())
    wallpath = os.path.join(outdir, f"wall_record_eps{eps}.csv")
    _write_csv(
        wallpath,
        "parameter,wall_coordinate,total_F",
        [f"{p!r},{c!r},{f!r}" for p, c, f in result.wall_record],
    )
    manifest.artifacts[f"saddle eps={eps}"] = spath
    manifest.artifacts[f"width_history eps={eps}"] = wpath
    manifest.artifacts[f"saddle_spectrum eps={eps}"] = specpath
    manifest.artifacts[f"wall_record eps={eps}"] = wallpath
    manifest.constants[f"width eps={eps}"] = result.width
    manifest.constants[f"saddle_E eps={eps}"] = pmc_energy(
        result.saddle, eps, g, lam, cfg.well
    ).total_E
    manifest.constants[f"saddle_index eps={eps}"] = result.spectrum.negative_count
    return low, high, result


def _run_minmax(cfg, outdir, manifest):
    for eps in cfg.eps_schedule:
        _minmax_once(cfg, outdir, manifest, eps)


def _diagnose_once(cfg, outdir, manifest, u, eps, tag):
    g = cfg.forcing(u.grid)
    lam = cfg.resolved_lam()
    sigma = sigma_constant(cfg.well)
    measure = diagnostics.energy_measure(u, eps, cfg.well)
    geom = diagnostics.extract_interface(u)
    rows = []
    for pi, poly in enumerate(geom.polylines):
        for k in range(len(poly)):
            rows.append(
                f"{pi},{poly.points[k][0]!r},{poly.points[k][1]!r},"
                f"{poly.normals[k][0]!r},{poly.normals[k][1]!r}"
            )
    ppath = os.path.join(outdir, f"polylines_{tag}.csv")
    _write_csv(ppath, "arc,x,y,nx,ny", rows)
    mults = diagnostics.multiplicity_estimate(measure, geom)
    phases = diagnostics.phase_classify(u)
    report = {
        "total_mass": measure.total_mass,
        "total_length": geom.total_length,
        "arcs": [
            {
                "index": m.arc_index,
                "length": m.length,
                "mass": m.mass,
                "multiplicity": m.estimate,
                "reliable": m.reliable,
            }
            for m in mults
        ],
        "positive_volume": phases.positive_volume,
        "negative_volume": phases.negative_volume,
    }
    if geom.polylines:
        curv = diagnostics.curvature_vs_g(geom, g, lam, sigma)
        report["median_curvature_ratio"] = curv.median_ratio
        report["iqr_curvature_ratio"] = curv.iqr_ratio
    rpath = os.path.join(outdir, f"diagnose_{tag}.json")
    with open(rpath, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    manifest.artifacts[f"polylines {tag}"] = ppath
    manifest.artifacts[f"diagnose {tag}"] = rpath
    return report, geom, mults


def _run_diagnose(cfg, outdir, manifest):
    grid = cfg.grid()
    u = _load_input_field(cfg, grid)
    for eps in cfg.eps_schedule:
        with _Stage(manifest, f"diagnose eps={eps}"):
            _diagnose_once(cfg, outdir, manifest, u, eps, f"eps{eps}")


def _construct_once(cfg, outdir, manifest, eps, valley_low, valley_high):
    grid = cfg.grid()
    g = cfg.forcing(grid)
    lam = cfg.resolved_lam()
    w = cfg.well
    sigma = sigma_constant(w)
    spec = cfg.interface_spec()
    spec.validate_windows(grid)
    dist = recovery.distance_field(grid, spec)
    with _Stage(manifest, f"recovery eps={eps}"):
        base = recovery.recovery_function(dist, eps, w)
        gpath = os.path.join(outdir, f"recovery_eps{eps}.pmcf")
        save_field(gpath, base)
        manifest.artifacts[f"recovery eps={eps}"] = gpath
    with _Stage(manifest, f"bump-search eps={eps}"):
        searches = [
            recovery.t0_search(spec, grid, eps, g, lam, w, j, cfg.target_fraction)
            for j in (0, 1)
        ]
    t0s = (searches[0].t0, searches[1].t0)
    taus = (searches[0].tau, searches[1].tau)
    inner = 2.0 * spec.windows[0].radius
    varsigma = min(inner, taus[0] / 2.0, taus[1] / 2.0)
    with _Stage(manifest, f"avoid-peak eps={eps}"):
        gamma = recovery.avoid_peak_path(
            spec, grid, eps, g, lam, w, t0s, cfg.knots_per_stage
        )
    with _Stage(manifest, f"path-to-valley eps={eps}"):
        down = recovery.annihilation_path(
            spec, grid, eps, g, lam, w, gamma.knots[0], valley_low,
            flow_tol=cfg.tol, max_steps=cfg.max_steps,
        )
    with _Stage(manifest, f"stable-state eps={eps}"):
        v, trace, witness = recovery.stable_from_seed(
            spec, grid, eps, g, lam, w, searches, valley_high=valley_high,
            tol=cfg.tol, max_steps=cfg.max_steps,
        )
    vpath = os.path.join(outdir, f"stable_eps{eps}.pmcf")
    save_field(vpath, v)
    manifest.artifacts[f"stable eps={eps}"] = vpath

    # Assemble the concatenated path: valley -> annihilation sweep reversed
    # -> avoid-the-peak -> mollified seed -> flow iterates -> stable state.
    knots = list(reversed(down.knots)) + list(gamma.knots)
    knots += [snap for _, snap in trace.snapshots]
    knots.append(v)
    bound = 2.0 * spec.length(grid) + integrate_forcing(g, lam) / (2.0 * sigma) - varsigma / 2.0
    rows, max_ratio = [], -math.inf
    for i, u in enumerate(knots):
        rep = pmc_energy(u, eps, g, lam, w)
        ratio = rep.total_F / (2.0 * sigma)
        max_ratio = max(max_ratio, ratio)
        rows.append(f"{i},{rep.total_E!r},{rep.total_F!r},{ratio!r},{bound!r},{bound - ratio!r}")
    lpath = os.path.join(outdir, f"ledger_eps{eps}.csv")
    _write_csv(lpath, "knot,total_E,total_F,ratio,bound,margin", rows)
    manifest.artifacts[f"ledger eps={eps}"] = lpath
    manifest.constants[f"t0 eps={eps}"] = t0s
    manifest.constants[f"tau eps={eps}"] = taus
    manifest.constants[f"varsigma eps={eps}"] = varsigma
    manifest.constants[f"mollify_delta eps={eps}"] = witness.delta
    manifest.constants[f"ledger_margin eps={eps}"] = bound - max_ratio
    manifest.constants[f"stable_index eps={eps}"] = witness.negative_count
    manifest.constants[f"witness_min eps={eps}"] = witness.witness_min
    distinct = float(np.abs(v.values - valley_high.values).max()) if valley_high is not None else float("nan")
    manifest.constants[f"distance_to_high_valley eps={eps}"] = distinct
    return v, witness, bound - max_ratio


def integrate_forcing(g: ScalarField, lam):
    from .grid import integrate

    return lam * integrate(g)


def _run_construct(cfg, outdir, manifest):
    grid = cfg.grid()
    g = cfg.forcing(grid)
    lam = cfg.resolved_lam()
    for eps in cfg.eps_schedule:
        low, high, _ = valley_points(eps, g, lam, cfg.well, tol=cfg.tol)
        _construct_once(cfg, outdir, manifest, eps, low, high)


def _run_full(cfg, outdir, manifest):
    for eps in cfg.eps_schedule:
        low, high, result = _minmax_once(cfg, outdir, manifest, eps)
        report, geom, mults = _diagnose_once(
            cfg, outdir, manifest, result.saddle, eps, f"saddle_eps{eps}"
        )
        boundary_empty = geom.empty
        even_everywhere = bool(mults) and all(
            m.estimate % 2 == 0 and m.estimate >= 2 for m in mults
        )
        manifest.constants[f"construct_branch eps={eps}"] = bool(
            boundary_empty or even_everywhere
        )
        if boundary_empty or even_everywhere:
            v, witness, margin = _construct_once(cfg, outdir, manifest, eps, low, high)
            _diagnose_once(cfg, outdir, manifest, v, eps, f"stable_eps{eps}")
