import json

import pytest

from cwiener.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_GUARD, EXIT_OK, main
from cwiener.config import apply_overrides, load_config, validate_config
from cwiener.errors import ConfigError
from cwiener.scenarios import PIPELINES, PRESETS


def test_list_sorted_with_all_presets(capsys):
    assert main(["list"]) == EXIT_OK
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == sorted(names)
    assert len(names) >= 8
    assert set(names) == set(PRESETS)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates(name, capsys):
    assert main(["validate", name]) == EXIT_OK
    assert capsys.readouterr().out.strip() == f"ok {name}"


def test_presets_fill_every_threshold():
    for name, pipe in PIPELINES.items():
        cfg = load_config(name)
        assert set(cfg.thresholds()) == set(pipe.defaults)


def test_unknown_key_names_key_and_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "scenario": "ou-stationary",\n  "alpa": {"magnitude": 1.0}\n}\n')
    assert main(["validate", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "alpa" in err and "line 3" in err
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    assert exc.value.key_path == "alpa" and exc.value.line == 3


def test_nested_unknown_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "scenario": "ou-stationary",\n  "ensemble": {\n    "cout": 5\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    assert exc.value.key_path == "ensemble.cout" and exc.value.line == 4


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"scenario": }')
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_missing_source():
    with pytest.raises(ConfigError):
        load_config("no-such-preset")


@pytest.mark.parametrize("data", [
    {"scenario": "nope"},
    {"scenario": "ou-stationary", "criteria": {"made_up": 1.0}},
    {"scenario": "ou-stationary", "ensemble": {"count": 0}},
    {"scenario": "ou-stationary", "alpha": {"magnitude": -1.0}},
    [],
])
def test_invalid_documents(data):
    with pytest.raises(ConfigError):
        validate_config(data)


def test_overrides_parse_json_values():
    out = apply_overrides({"a": {"b": 1}}, ["a.b=2.5", "a.c=[1, 2]", "d.e=text"])
    assert out == {"a": {"b": 2.5, "c": [1, 2]}, "d": {"e": "text"}}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError):
        apply_overrides({"a": 3}, ["a.b=1"])


def test_override_reaches_config():
    cfg = load_config("ou-stationary", ["ensemble.seed=7", "criteria.density_l1=0.5"])
    assert cfg.ensemble.seed == 7
    assert cfg.thresholds()["density_l1"] == 0.5


def test_guard_exit_code(tmp_path, capsys):
    code = main(["run", "quantum-ho-ground", "--out", str(tmp_path), "--override", "ensemble.dt=0.1"])
    assert code == EXIT_GUARD
    assert "stability" in capsys.readouterr().err


def test_failing_criterion_exit_code(tmp_path, capsys):
    code = main(["run", "uncertainty-family", "--out", str(tmp_path), "--override", "criteria.gaussian_product=0"])
    assert code == EXIT_FAIL
    out = capsys.readouterr().out
    assert "FAIL uncertainty-family:gaussian_product" in out
    assert out.splitlines()[-1].startswith("FAIL uncertainty-family")


def test_bad_threads(tmp_path):
    assert main(["run", "ring-winding", "--out", str(tmp_path), "--threads", "0"]) == EXIT_CONFIG


def test_run_writes_artifacts_and_reruns_identically(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "ring-winding", "--out", str(a), "--seed", "5"]) == EXIT_OK
    assert main(["run", "ring-winding", "--out", str(b), "--seed", "5"]) == EXIT_OK
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    out = capsys.readouterr().out
    assert "PASS ring-winding:" in out


def test_manifest_round_trips(tmp_path):
    assert main(["run", "ring-winding", "--out", str(tmp_path), "--seed", "11"]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["provenance"]["seed"] == 11
    assert manifest["provenance"]["package"] == "cwiener"
    cfg = validate_config(manifest)
    assert cfg.ensemble.seed == 11 and cfg.scenario == "ring-winding"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] is True
