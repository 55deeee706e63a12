import json

import pytest

from gatekeeper.config import ExperimentConfig
from gatekeeper.training import ConfigurationError


def test_defaults_are_valid_and_round_trip(tmp_path):
    cfg = ExperimentConfig()
    cfg.check()
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(path) == cfg


def test_partial_sections_override_defaults():
    cfg = ExperimentConfig.from_dict({"model": {"cell": "lstm"}, "protection": {"key": {"K": 3}}})
    assert cfg.model.cell == "lstm" and cfg.model.hidden == ExperimentConfig().model.hidden
    assert cfg.protection.key.K == 3 and cfg.protection.key.l == ExperimentConfig().protection.key.l


def test_ints_widen_to_float():
    cfg = ExperimentConfig.from_dict({"training": {"lr": 1}})
    assert isinstance(cfg.training.lr, float)


@pytest.mark.parametrize("data,match", [
    ({"modle": {}}, "modle"),
    ({"model": {"hiden": 3}}, "model"),
    ({"model": {"hidden": "32"}}, "model.hidden"),
    ({"model": {"hidden": True}}, "model.hidden"),
    ({"model": {"cell": "rnn"}}, "model.cell"),
    ({"training": {"trigger": 40, "batch": 16}}, "training.trigger"),
    ({"protection": {"key": {"method": "secret"}}}, "key.method"),
    ({"protection": {"signature": {"gamma": 0}}}, "gamma"),
    ({"dataset": {"kind": "idx_rows"}}, "images"),
    ({"attack": {"prune_rates": [0.5, 1.5]}}, "attack"),
    ({"model": None}, "model"),
    ([], "object"),
])
def test_invalid_configs(data, match):
    with pytest.raises(ConfigurationError, match=match):
        ExperimentConfig.from_dict(data)


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        ExperimentConfig.load(bad)
    with pytest.raises(ConfigurationError, match="cannot read"):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_to_dict_is_json_serialisable():
    assert json.loads(json.dumps(ExperimentConfig().to_dict()))["model"]["cell"] == "gru"
