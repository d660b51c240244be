"""Strict flat-config parsing."""

import pytest

from epigrad import config as cfgmod


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_round_trip_types(tmp_path):
    path = _write(tmp_path, """
# a comment
run.seed = 7
population.n = 500
epi.r = 2.0,1.5
epi.i0 = 0.01
forecast.anchors = 14,21
calibrate.optimizer = adam
""")
    cfg = cfgmod.load_config(path)
    assert cfg.get("run.seed") == 7
    assert cfg.get("population.n") == 500
    assert cfg.get("epi.r") == [2.0, 1.5]
    assert cfg.get("epi.i0") == 0.01
    assert cfg.get("forecast.anchors") == [14, 21]
    assert cfg.get("calibrate.optimizer") == "adam"
    assert "epi.m" not in cfg
    assert cfg.get("epi.m") is None


def test_unknown_key_rejected_with_line(tmp_path):
    path = _write(tmp_path, "run.seed = 1\nepi.plague = 2\n")
    with pytest.raises(ValueError, match=r":2: unknown key 'epi.plague'"):
        cfgmod.load_config(path)


def test_duplicate_key_rejected(tmp_path):
    path = _write(tmp_path, "run.seed = 1\nrun.seed = 2\n")
    with pytest.raises(ValueError, match="duplicate"):
        cfgmod.load_config(path)


def test_bad_value_names_line(tmp_path):
    path = _write(tmp_path, "population.n = many\n")
    with pytest.raises(ValueError, match=r":1: bad value"):
        cfgmod.load_config(path)


def test_missing_equals_sign(tmp_path):
    path = _write(tmp_path, "run.seed 5\n")
    with pytest.raises(ValueError, match="expected"):
        cfgmod.load_config(path)


def test_referenced_file_must_exist(tmp_path):
    path = _write(tmp_path, "calibrate.target_csv = missing.csv\n")
    with pytest.raises(ValueError, match="file not found"):
        cfgmod.load_config(path)


def test_relative_paths_resolve_against_config(tmp_path):
    (tmp_path / "data.csv").write_text("date,region,value\n")
    path = _write(tmp_path, "calibrate.target_csv = data.csv\n")
    cfg = cfgmod.load_config(path)
    assert cfg.get("calibrate.target_csv") == str(tmp_path / "data.csv")


def test_missing_config_file():
    with pytest.raises(FileNotFoundError, match="no/such"):
        cfgmod.load_config("no/such/file.cfg")


def test_accessors():
    cfg = cfgmod.RunConfig()
    with pytest.raises(KeyError, match="unregistered"):
        cfg.get("made.up")
    with pytest.raises(KeyError, match="run.seed"):
        cfg.require("run.seed")
    assert cfg.get("run.seed", 3) == 3
