# tests/test_config_manager.py

import json
import math
from fractions import Fraction

import pytest

from hallab.config_manager import ConfigManager, RunManifest, eps_values, parse_flux, write_csv, write_json
from hallab.exceptions import ConfigError
from hallab.utils.settings import DEFAULT_VALUES


def _manager(tmp_path, data=None, persist=False):
    path = tmp_path / "config.json"
    if data is not None:
        path.write_text(json.dumps(data), encoding="utf-8")
    return ConfigManager(path, persist=persist)


def test_missing_file_gives_defaults(tmp_path):
    cfg = _manager(tmp_path).run_config()
    assert cfg.L == 3
    assert cfg.b == pytest.approx(2 * math.pi / 3)
    assert cfg.flux == Fraction(1, 3)
    assert cfg.fluxes == (Fraction(0), Fraction(1, 3), Fraction(2, 3))
    assert len(cfg.eps_grid) == 7
    assert cfg.scan_eps[0] == 0.0
    assert cfg.seed == DEFAULT_VALUES["seed"]


def test_persisting_manager_writes_merged_defaults(tmp_path):
    _manager(tmp_path, {"lattice": {"L": 6}}, persist=True)
    stored = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
    assert stored["lattice"]["L"] == 6
    assert stored["lattice"]["flux"] == "1/3"
    assert "neass" in stored


def test_soft_entries_are_reset(tmp_path):
    manager = _manager(tmp_path, {"filter": {"profile": "gauss", "nodes": 7, "g": -1.0},
                                  "neass": {"probes": 0}, "seed": "abc"})
    cfg = manager.run_config()
    assert cfg.profile == "poly"
    assert cfg.nodes == DEFAULT_VALUES["filter"]["nodes"]
    assert cfg.g is None
    assert cfg.probes == DEFAULT_VALUES["neass"]["probes"]
    assert cfg.seed == DEFAULT_VALUES["seed"]


@pytest.mark.parametrize("data", [
    {"lattice": {"L": 4, "flux": "1/3"}},
    {"lattice": {"flux": "one third"}},
    {"neass": {"order": 5}},
    {"neass": {"eps_grid": [0.1, 0.05]}},
    {"neass": {"eps_grid": [0.5, 2.0]}},
    {"conductance": {"side": 8, "segments": [16]}},
    {"model": {"mu": "middle"}},
])
def test_hard_violations_raise(tmp_path, data):
    with pytest.raises(ConfigError):
        _manager(tmp_path, data).run_config()


def test_broken_json_raises(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(path)


def test_open_boundaries_accept_any_flux(tmp_path):
    cfg = _manager(tmp_path, {"lattice": {"L": 4, "flux": 0.3, "pbc": False}}).run_config()
    assert cfg.b == 0.3 and cfg.flux is None and not cfg.pbc


def test_flux_and_eps_parsing():
    b, frac = parse_flux("2/5")
    assert frac == Fraction(2, 5) and b == pytest.approx(4 * math.pi / 5)
    assert eps_values({"log10_min": -2, "log10_max": -1, "count": 2}) == pytest.approx((0.01, 0.1))
    with pytest.raises(ConfigError):
        eps_values([])


def test_config_hash_is_deterministic(tmp_path):
    first = _manager(tmp_path, {"seed": 7}).run_config().config_hash()
    again = _manager(tmp_path, {"seed": 7}).run_config().config_hash()
    other = _manager(tmp_path, {"seed": 8}).run_config().config_hash()
    assert first == again != other


def test_override_and_set(tmp_path):
    manager = _manager(tmp_path)
    manager.override("model", "lambda", 0.2)
    manager.override("model", "mu", None)
    manager.set("seed", 99)
    cfg = manager.run_config()
    assert cfg.lam == 0.2 and cfg.mu == "auto" and cfg.seed == 99


def test_outputs_and_manifest(tmp_path):
    csv_path = write_csv(tmp_path / "rows.csv", [{"eps": 0.1, "j": 1 / 3}])
    assert "0.33333333333333331" in csv_path.read_text(encoding="utf-8")
    json_path = write_json(tmp_path / "summary.json", {"value": complex(1, 2), "flux": Fraction(1, 3)})
    assert json.loads(json_path.read_text(encoding="utf-8")) == {"flux": "1/3", "value": {"im": 2.0, "re": 1.0}}

    manifest = RunManifest("spectrum", "abc", {"exact": 1e-12})
    manifest.add_output(csv_path)
    before = manifest.digest()
    manifest.timings["spectrum"] = 1.5
    assert manifest.digest() == before
    written = json.loads(manifest.write(tmp_path).read_text(encoding="utf-8"))
    assert written["digest"] == before
    assert set(written["outputs"]) == {"rows.csv"}


def test_tolerances_are_validated_and_looked_up(tmp_path):
    cfg = _manager(tmp_path, {"tolerances": {"flow": 1e-6, "exact": -1.0, "bogus": 3.0}}).run_config()
    assert cfg.tolerance("flow") == 1e-6
    assert cfg.tolerance("exact") == DEFAULT_VALUES["tolerances"]["exact"]
    assert cfg.tolerance("chern_simons") == DEFAULT_VALUES["tolerances"]["chern_simons"]
    with pytest.raises(KeyError):
        cfg.tolerance("bogus")


def test_perturbation_records(tmp_path):
    records = [{"sites": [[0, 0], [1, 0]], "expr": "n0*n1"}]
    assert _manager(tmp_path, {"neass": {"perturbation": records}}).run_config().perturbation == records
    assert _manager(tmp_path, {}).run_config().perturbation is None
    for bad in ("n0*n1", [{"sites": [[0, 0]]}], [["n0"]]):
        with pytest.raises(ConfigError, match="perturbation"):
            _manager(tmp_path, {"neass": {"perturbation": bad}}).run_config()
