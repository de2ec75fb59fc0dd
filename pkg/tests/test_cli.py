# tests/test_cli.py

import json

import pandas as pd
import pytest
from click.testing import CliRunner

from hallab.cli import cli


@pytest.fixture
def runner():
    return CliRunner()


def _config(tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _invoke(runner, tmp_path, data, *args, out="out"):
    target = tmp_path / out
    result = runner.invoke(cli, ["--config", _config(tmp_path, data), "--out", str(target), "--quiet", *args])
    return result, target


def test_spectrum_writes_table_and_manifest(runner, tmp_path):
    result, out = _invoke(runner, tmp_path, {"lattice": {"L": 3}}, "spectrum")
    assert result.exit_code == 0, result.output
    table = pd.read_csv(out / "spectrum.csv")
    assert len(table) == 27
    assert set(table["flux"]) == {"0", "1/3", "2/3"}
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "spectrum"
    assert set(manifest["outputs"]) == {"spectrum.csv", "spectrum.json"}


def test_config_errors_exit_with_code_two(runner, tmp_path):
    result, out = _invoke(runner, tmp_path, {"lattice": {"L": 3, "flux": "1/4"}}, "spectrum")
    assert result.exit_code == 2
    record = json.loads((out / "error.json").read_text(encoding="utf-8"))
    assert record["error"] == "ConfigError"


def test_chern_reports_all_oracles(runner, tmp_path):
    result, out = _invoke(runner, tmp_path, {"lattice": {"L": 6}}, "chern")
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "chern.json").read_text(encoding="utf-8"))
    assert summary["filling"] == 12
    assert summary["kubo"] == pytest.approx(summary["double_commutator_spectral"], abs=1e-10)
    assert summary["double_commutator"] == pytest.approx(summary["chern_over_2pi"], rel=1e-2)
    assert len(pd.read_csv(out / "marker.csv")) == 36


def test_csv_only_output(runner, tmp_path):
    data = {"lattice": {"L": 3}, "outputs": {"formats": ["csv"]}}
    result, out = _invoke(runner, tmp_path, data, "spectrum")
    assert result.exit_code == 0, result.output
    assert not (out / "spectrum.json").exists()


@pytest.mark.slow
def test_selftest_is_deterministic(runner, tmp_path):
    first, out1 = _invoke(runner, tmp_path, {"seed": 11}, "selftest", out="a")
    second, out2 = _invoke(runner, tmp_path, {"seed": 11}, "selftest", out="b")
    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output
    r1 = json.loads((out1 / "selftest.json").read_text(encoding="utf-8"))
    r2 = json.loads((out2 / "selftest.json").read_text(encoding="utf-8"))
    assert r1["passed"]
    assert r1["digest"] == r2["digest"]


def test_seed_option_overrides_the_config(runner, tmp_path):
    target = tmp_path / "seeded"
    result = runner.invoke(cli, ["--config", _config(tmp_path, {"seed": 1}), "--out", str(target),
                                 "--seed", "5", "--quiet", "spectrum"])
    assert result.exit_code == 0, result.output
    manifest = json.loads((target / "manifest.json").read_text(encoding="utf-8"))
    assert len(manifest["config_hash"]) == 64


@pytest.mark.slow
def test_sigma_on_the_small_torus(runner, tmp_path):
    result, out = _invoke(runner, tmp_path, {}, "sigma", "--no-profiles")
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "sigma.json").read_text(encoding="utf-8"))
    assert summary["quasi_free_deviation"] <= 1e-8


@pytest.mark.slow
def test_selftest_uses_the_configured_tolerances(runner, tmp_path):
    result, out = _invoke(runner, tmp_path, {"seed": 11, "tolerances": {"flow": 1e-30}}, "selftest")
    assert result.exit_code != 0
    report = json.loads((out / "selftest.json").read_text(encoding="utf-8"))
    flow = [c for c in report["checks"] if c["tolerance"] == "flow"]
    assert flow and all(c["bound"] == 1e-30 for c in flow)
    assert not report["passed"]
    exact = [c for c in report["checks"] if c["tolerance"] == "exact"]
    assert all(c["bound"] == 1e-12 for c in exact)


@pytest.mark.slow
def test_neass_scan_uses_the_configured_perturbation(runner, tmp_path):
    neass = {"order": 1, "eps_grid": [0.01, 0.02, 0.04], "probes": 2}
    plain, out_plain = _invoke(runner, tmp_path, {"neass": neass}, "neass-scan", out="plain")
    perturbed = {**neass, "perturbation": [{"sites": [[0, 0], [1, 0]], "expr": "0.3*n0*n1"}]}
    driven, out_driven = _invoke(runner, tmp_path, {"neass": perturbed}, "neass-scan", out="driven")
    assert plain.exit_code == 0, plain.output
    assert driven.exit_code == 0, driven.output
    first = json.loads((out_plain / "neass.json").read_text(encoding="utf-8"))
    second = json.loads((out_driven / "neass.json").read_text(encoding="utf-8"))
    assert first["perturbation"] is False and second["perturbation"] is True
    assert first["poly"]["neass"]["residuals"] != second["poly"]["neass"]["residuals"]
