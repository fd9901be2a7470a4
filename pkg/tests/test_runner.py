import json
import math

import numpy as np
import pytest

from pmcf.cli import main as cli_main
from pmcf.errors import ConfigError
from pmcf.grid import TorusGrid, load_field, save_field, constant_field
from pmcf.runner import _Expr, load_config, parse_config, run_experiment
from pmcf.well import sigma_constant

BASIC = """
[grid]
dims = 32 32
extents = 2.0 2.0

[problem]
eps = 0.1
g = constant 1.0

[scenario]
scenario = relax

[output]
dir = out
"""


def test_minimal_config_defaults():
    cfg = parse_config(BASIC)
    assert cfg.grid_dims == (32, 32)
    assert cfg.eps_schedule == (0.1,)
    assert cfg.lam is None  # resolves to the surface-tension constant
    assert cfg.resolved_lam() == pytest.approx(sigma_constant(cfg.well))
    assert cfg.tol is None and cfg.dt is None


def test_unknown_key_reports_line_number():
    bad = BASIC + "\n[solver]\nwhatnot = 3\n"
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert "line" in str(err.value) and "whatnot" in str(err.value)


def test_type_error_reports_line_number():
    bad = BASIC.replace("eps = 0.1", "eps = banana")
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert "line" in str(err.value)


def test_smallness_gate_rejects_large_eps():
    bad = BASIC.replace("scenario = relax", "scenario = construct").replace(
        "eps = 0.1", "eps = 0.5"
    ) + "\n[scenario]\nwindow_centers = 0.5 1.5\nwindow_radius = 0.2\n"
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert "smallness" in str(err.value)


def test_expression_grammar():
    e = _Expr("0.5 + 0.5*cos(2*pi*x/8) - exp(-y)/4")
    x, y = 2.0, 1.0
    expect = 0.5 + 0.5 * math.cos(2 * math.pi * x / 8) - math.exp(-y) / 4
    assert e.evaluate(x, y) == pytest.approx(expect)
    with pytest.raises(ConfigError):
        _Expr("import os")
    with pytest.raises(ConfigError):
        _Expr("sin(x")
    with pytest.raises(ConfigError):
        _Expr("x + unknown(y)")


def test_expression_forcing_field():
    text = BASIC.replace("g = constant 1.0", "g = expr 0.5+0.5*cos(2*pi*x/2)")
    cfg = parse_config(text)
    g = cfg.forcing()
    assert g.min() >= 0.0
    assert g.values.max() == pytest.approx(1.0)


def test_negative_forcing_needs_shift():
    text = BASIC.replace("g = constant 1.0", "g = expr cos(2*pi*x/2)")
    cfg = parse_config(text)
    with pytest.raises(ConfigError):
        cfg.forcing()
    cfg2 = parse_config(text + "\n[problem]\ng_shift = 1.0\n")
    assert cfg2.forcing().min() >= 0.0


def test_relax_run_and_determinism(tmp_path):
    text = BASIC + f"\n[solver]\nmax_steps = 5000\n"
    cfg = parse_config(text)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    man1 = run_experiment(cfg, outdir=str(out1))
    man2 = run_experiment(parse_config(text), outdir=str(out2))
    assert man1.status == "completed"
    f1 = (out1 / "relaxed_eps0.1.pmcf").read_bytes()
    f2 = (out2 / "relaxed_eps0.1.pmcf").read_bytes()
    assert f1 == f2
    payload = json.loads((out1 / "manifest.json").read_text())
    assert payload["status"] == "completed"
    assert "final_F eps=0.1" in payload["constants"]
    # the artifact paths recorded in the manifest exist
    for path in payload["artifacts"].values():
        assert (tmp_path / path).exists() or __import__("os").path.exists(path)


def test_profile_scenario(tmp_path):
    text = BASIC.replace("scenario = relax", "scenario = profile")
    cfg = parse_config(text)
    man = run_experiment(cfg, outdir=str(tmp_path / "p"))
    assert man.status == "completed"
    csv = (tmp_path / "p" / "profile_eps0.1.csv").read_text().splitlines()
    assert csv[0] == "r,value,energy_density"
    assert len(csv) > 100


def test_energy_and_diagnose_scenarios(tmp_path, well):
    grid = TorusGrid((32, 32), (2.0, 2.0))
    u = constant_field(grid, -1.0)
    fpath = tmp_path / "u.pmcf"
    save_field(fpath, u)
    text = BASIC.replace("scenario = relax", "scenario = energy")
    text += f"\n[input]\nfield = {fpath}\n"
    cfg = parse_config(text)
    man = run_experiment(cfg, outdir=str(tmp_path / "e"))
    rows = (tmp_path / "e" / "energy.csv").read_text().splitlines()
    assert rows[0].startswith("eps,lam")
    vals = rows[1].split(",")
    assert float(vals[5]) == 0.0  # total_E of a pure phase
    text2 = text.replace("scenario = energy", "scenario = diagnose")
    man2 = run_experiment(parse_config(text2), outdir=str(tmp_path / "d"))
    report = json.loads((tmp_path / "d" / "diagnose_eps0.1.json").read_text())
    assert report["total_mass"] == 0.0
    assert report["arcs"] == []


def test_cli_exit_codes(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(BASIC + "\n[solver]\nmax_steps = 5000\n")
    rc = cli_main(["relax", str(cfg_path), "--output", str(tmp_path / "out")])
    assert rc == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text(BASIC.replace("eps = 0.1", "eps = nope"))
    assert cli_main(["relax", str(bad)]) == 2
    # numeric failure: absurd eps for the barrier construction
    hard = tmp_path / "hard.cfg"
    hard.write_text(
        BASIC.replace("eps = 0.1", "eps = 0.9").replace(
            "scenario = relax", "scenario = minmax"
        )
        + "\n[problem]\nlam = 5.0\n"
    )
    assert cli_main(["run", str(hard), "--output", str(tmp_path / "h")]) == 3


def test_field_file_forcing_roundtrip(tmp_path):
    grid = TorusGrid((32, 32), (2.0, 2.0))
    g = constant_field(grid, 2.0)
    gpath = tmp_path / "g.pmcf"
    save_field(gpath, g)
    text = BASIC.replace("g = constant 1.0", f"g = file {gpath}")
    cfg = parse_config(text)
    loaded = cfg.forcing()
    assert np.array_equal(loaded.values, g.values)
