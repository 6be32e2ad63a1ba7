from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from unrect.config import INTERVAL_ANGLE, ExperimentConfig, Settings, load_experiment
from unrect.errors import GuardError


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.generator == "four-corner"
    assert cfg.map.angle == pytest.approx(INTERVAL_ANGLE)
    assert cfg.epsilon == 0.1 and cfg.steps == 3
    assert cfg.charts[0].shape == "ball"


def test_flags_override_the_config_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"depth": 5, "epsilon": 0.2, "map": {"angle": 0.0}}), encoding="utf-8")
    cfg = load_experiment(path, {"depth": 3, "epsilon": None})
    assert cfg.depth == 3
    assert cfg.epsilon == 0.2
    assert cfg.map.angle == 0.0


def test_config_file_errors(tmp_path):
    with pytest.raises(GuardError):
        load_experiment(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(GuardError):
        load_experiment(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(GuardError):
        load_experiment(listed)


def test_validation_rejects_bad_values():
    with pytest.raises(ValidationError):
        load_experiment(None, {"angles": 4})
    with pytest.raises(ValidationError):
        load_experiment(None, {"flow_steps": 8})
    with pytest.raises(ValidationError):
        load_experiment(None, {"unknown": 1})
    with pytest.raises(ValidationError):
        load_experiment(None, {"charts": [{"shape": "ball", "center": [0, 0]}]})


def test_require_seed():
    with pytest.raises(GuardError):
        ExperimentConfig().require_seed()
    assert ExperimentConfig(seed=5).require_seed() == 5


def test_thread_setting_from_env(monkeypatch):
    monkeypatch.setenv("UNRECT_THREADS", "3")
    assert Settings.from_env().threads == 3
    monkeypatch.setenv("UNRECT_THREADS", "zero")
    assert Settings.from_env().threads == 1
    monkeypatch.setenv("UNRECT_LOG_LEVEL", "DEBUG")
    assert Settings.from_env().log_level == "DEBUG"
