import json

import numpy as np
import pandas as pd
import pytest
import yaml

import cli
from convergence import inverse_radius

TINY = {
    "name": "tiny",
    "domain": "interval",
    "medium": {"type": "gaussian", "params": {"amplitude": 0.01, "epsilon": 0.005, "center": [0.5]}},
    "contrast": 1.0,
    "unknowns": "both",
    "sources": {"count": 2, "scales": [0.5, 1.0], "frequencies": [0.9, 1.1]},
    "resolutions": {"synthesis": 49, "inversion": 25},
    "M": 3,
    "tau": 0.01,
}


def write_scenario(tmp_path, name="scenario.yaml", **changes):
    path = tmp_path / name
    path.write_text(yaml.safe_dump({**TINY, **changes}))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def read_json(path):
    return json.loads(path.read_text())


def test_forward_zero_medium(tmp_path):
    scenario = write_scenario(tmp_path, medium={"type": "zero"}, forward={"tol": 1e-12})
    out = tmp_path / "fwd"
    assert run("forward", "--scenario", scenario, "--out", out, "--threads", 1) == 0
    summary = read_json(out / "fixed_point.json")
    for entry in summary["sources"]:
        assert entry["report"]["iterations"] == 1
        assert entry["report"]["residual"] <= 1e-12
    terms = pd.read_csv(out / "terms.csv")
    assert set(terms.columns) >= {"source", "order", "field_norm", "residual_vs_reference"}
    fields = pd.read_csv(out / "fields.csv")
    assert set(fields.columns) >= {"source", "node", "x", "u0", "u"}
    assert np.allclose(fields["u"], fields["u0"], rtol=0.0, atol=1e-12)
    manifest = read_json(out / "manifest.json")
    assert set(manifest["runs"]["forward"]["files"]) == {"fixed_point.json", "terms.csv", "fields.csv", "scenario.yaml"}
    assert len(manifest["runs"]["forward"]["config_hash"]) == 64


def test_forward_contracting_medium(tmp_path):
    out = tmp_path / "fwd"
    assert run("forward", "--scenario", write_scenario(tmp_path), "--out", out) == 0
    for entry in read_json(out / "fixed_point.json")["sources"]:
        assert entry["report"]["q"] < 1
        assert entry["report"]["converged"]


def test_forward_nonconvergence_exit_code(tmp_path):
    scenario = write_scenario(tmp_path, forward={"method": "fixed-point", "tol": 1e-15, "max_iter": 2})
    out = tmp_path / "fwd"
    assert run("forward", "--scenario", scenario, "--out", out) == 2
    assert not out.exists()


def test_malformed_scenario_writes_nothing(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("domain: interval\nmedium: [\n")
    out = tmp_path / "run"
    assert run("synth", "--scenario", bad, "--out", out) == 1
    assert not out.exists()
    invalid = write_scenario(tmp_path, name="invalid.yaml", tau=3.0)
    assert run("synth", "--scenario", invalid, "--out", out) == 1
    assert not out.exists()


def test_usage_errors_exit_1(tmp_path):
    scenario = write_scenario(tmp_path)
    assert run("transmogrify", "--scenario", scenario) == 1
    assert run("synth") == 1
    assert run("synth", "--scenario", scenario, "--order", 13, "--out", tmp_path / "x") == 1
    assert run("synth", "--scenario", scenario, "--threads", 0, "--out", tmp_path / "x") == 1
    assert not (tmp_path / "x").exists()


def test_invert_requires_data(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    assert run("invert", "--scenario", write_scenario(tmp_path), "--out", out) == 1
    assert run("analyze", "--scenario", write_scenario(tmp_path), "--out", out, "--check-data") == 1


def test_synth_invert_analyze(tmp_path):
    scenario = write_scenario(tmp_path)
    out = tmp_path / "run"
    assert run("synth", "--scenario", scenario, "--out", out, "--threads", 2) == 0
    phi = pd.read_csv(out / "phi.csv")
    assert len(phi) == 8 * 2

    assert run("invert", "--scenario", scenario, "--out", out, "--threads", 2) == 0
    for name in ("recon.csv", "diagnostics.json", "report.json", "crosssection.csv"):
        assert (out / name).exists()
    report = read_json(out / "report.json")
    assert len(report["errors"]["trajectory"]) == 3
    assert isinstance(report["radius_exceeded"], bool)

    assert run("analyze", "--scenario", scenario, "--out", out, "--check-data") == 0
    conv = read_json(out / "convergence.json")
    r, C = inverse_radius(conv["mu"], conv["K"], conv["nu"], conv["pinv_norm"])
    assert conv["r"] == r and conv["C"] == C
    assert conv["polynomial_defect"] == 0.0
    assert conv["data_within_radius"] in (True, False)
    assert conv["nu_head"][0] == pytest.approx(conv["nu0"])

    manifest = read_json(out / "manifest.json")
    assert set(manifest["runs"]) == {"synth", "invert", "analyze"}
    params = manifest["runs"]["invert"]["design_parameters"]
    assert params["tau"] == 0.01 and params["M"] == 3


def test_overrides_reach_the_run(tmp_path):
    scenario = write_scenario(tmp_path)
    out = tmp_path / "run"
    assert run("synth", "--scenario", scenario, "--out", out) == 0
    assert run("invert", "--scenario", scenario, "--out", out, "--order", 2, "--tau", 0.05) == 0
    report = read_json(out / "report.json")
    assert len(report["errors"]["trajectory"]) == 2
    manifest = read_json(out / "manifest.json")
    assert manifest["runs"]["invert"]["overrides"] == {"M": 2, "tau": 0.05}


def test_reruns_are_bit_identical(tmp_path):
    scenario = write_scenario(tmp_path, noise=1e-3, seed=11)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert run("synth", "--scenario", scenario, "--out", out, "--threads", 2) == 0
        assert run("invert", "--scenario", scenario, "--out", out, "--threads", 2) == 0
    for name in ("phi.csv", "recon.csv", "report.json", "diagnostics.json", "crosssection.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_default_run_directory(tmp_path, monkeypatch):
    scenario = write_scenario(tmp_path)
    monkeypatch.chdir(tmp_path)
    assert run("synth", "--scenario", scenario) == 0
    runs = list((tmp_path / "runs").glob("BornSim_synth_*"))
    assert len(runs) == 1
    assert (runs[0] / "phi.csv").exists()
