# /superlab/tests/test_data_manager.py

import json
import os

import pandas as pd
import pytest

import data_manager
from data_manager import (
    ExperimentConfig, parse_config, load_config, dump_config, config_hash, with_overrides, write_csv,
    write_manifest, new_manifest, record_error,
)
from utils.checks import check_config
from utils.errors import ConfigError


def test_minimal_config_fills_defaults(write_config):
    cfg = load_config(write_config({}), env=False)
    assert cfg.kernel.family == "gaussian_bump"
    assert cfg.grid.n_t == 64
    assert cfg.mc.antithetic is True
    assert cfg.experiment.moment_orders == [2, 4]


def test_round_trip(write_config, tmp_path):
    cfg = load_config(write_config({"rng": {"seed": 5}, "experiment": {"ys": [-1.0, 0.0, 1.0]}}), env=False)
    path = str(tmp_path / "dumped.yaml")
    text = dump_config(cfg, path)
    assert "seed: 5" in text
    again = load_config(path, env=False)
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_cfl_violation_is_reported_with_a_remedy(write_config):
    with pytest.raises(ConfigError) as err:
        load_config(write_config({"grid": {"n_t": 4}}), env=False)
    assert err.value.code == "invalid-config"
    assert "cfl-violation" in str(err.value)
    assert "raise grid.n_t" in str(err.value)


def test_parse_error_names_the_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("kernel:\n  family: zero\ngrid: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        load_config(str(path), env=False)
    assert err.value.code == "parse-error"
    assert "line" in str(err.value)
    with pytest.raises(ConfigError) as err:
        load_config(str(tmp_path / "missing.yaml"), env=False)
    assert err.value.code == "parse-error"


def test_unknown_and_invalid_fields(write_config):
    with pytest.raises(ConfigError) as err:
        load_config(write_config({"grid": {"n_steps": 10}}), env=False)
    assert "grid.n_steps" in str(err.value)
    with pytest.raises(ConfigError) as err:
        parse_config({"kernel": {"family": "laplace"}}, env=False)
    assert err.value.code == "invalid-config"


def test_cross_module_checks():
    with pytest.raises(ConfigError, match="even"):
        parse_config({"mc": {"n_paths": 11}}, env=False)
    with pytest.raises(ConfigError, match="moment_orders"):
        parse_config({"experiment": {"moment_orders": [2, 6]}}, env=False)
    with pytest.raises(ConfigError, match="experiment.r < experiment.t"):
        parse_config({"experiment": {"r": 0.5, "t": 0.5}}, env=False)
    with pytest.raises(ConfigError, match="time grid"):
        parse_config({"experiment": {"t": 0.51}}, env=False)
    with pytest.raises(ConfigError, match="memory cap"):
        parse_config({"kernel": {"family": "zero"}, "grid": {"n_t": 4096, "n_x": 8}}, env=False)


def test_narrow_domain_only_warns():
    cfg = parse_config({"kernel": {"family": "zero"}, "grid": {"x_min": -3.0, "x_max": 3.0, "n_x": 24}}, env=False)
    warnings = check_config(cfg)
    assert any("diffusion spans" in w for w in warnings)


def test_environment_and_flag_overrides(write_config, monkeypatch):
    path = write_config({"rng": {"seed": 1}})
    monkeypatch.setenv("SUPERLAB_SEED", "99")
    monkeypatch.setenv("SUPERLAB_WORKERS", "3")
    cfg = load_config(path)
    assert cfg.rng.seed == 99 and cfg.workers == 3
    cfg = with_overrides(cfg, seed=7, workers=2, out_dir="elsewhere")
    assert (cfg.rng.seed, cfg.workers, cfg.out_dir) == (7, 2, "elsewhere")
    monkeypatch.setenv("SUPERLAB_SEED", "abc")
    with pytest.raises(ConfigError):
        load_config(path)


def test_hash_depends_on_the_seed():
    a = ExperimentConfig()
    b = with_overrides(a, seed=a.rng.seed + 1)
    assert config_hash(a) != config_hash(b)


def test_csv_and_manifest(tmp_path):
    out = str(tmp_path / "run")
    manifest = new_manifest("density", ExperimentConfig())
    frame = pd.DataFrame({"y": [0.0, 0.5], "p_hat": [0.39894228040143, 1.0 / 3.0]})
    write_csv(out, "density.csv", frame, manifest, plot={"x": "y", "y": ["p_hat"], "title": "density"})
    body = open(os.path.join(out, "density.csv"), encoding="utf-8").read()
    assert body == "y,p_hat\n0,0.3989422804\n0.5,0.3333333333\n"
    assert set(manifest.files) == {"density.csv", "density.gp"}
    assert "using 1:2" in open(os.path.join(out, "density.gp"), encoding="utf-8").read()

    record_error(manifest, "spde", "blowup", "x" * 2000)
    path = write_manifest(out, manifest)
    with open(path, encoding="utf-8") as f:
        stored = json.load(f)
    assert stored["subcommand"] == "density"
    assert stored["error"]["code"] == "blowup"
    assert len(stored["error"]["message"]) <= 512
    assert stored["files"]["density.csv"] == manifest.files["density.csv"]


def test_outputs_stay_inside_the_run_directory(tmp_path):
    with pytest.raises(ConfigError):
        write_csv(str(tmp_path / "run"), "../escape.csv", pd.DataFrame({"a": [1]}))
    assert not os.path.exists(tmp_path / "escape.csv")
    assert data_manager.CSV_FLOAT_FORMAT == "%.10g"
