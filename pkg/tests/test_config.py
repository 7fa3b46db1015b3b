import json
from pathlib import Path

import pytest

from bidense.config import ConfigError, config_to_doc, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["toy.json", "toy_depth.json", "full_scale.json"])
def test_shipped_configs_load(name):
    config = load_config(CONFIGS / name)
    assert config.model.task in ("segmentation", "depth")


def test_defaults_and_depth_loss():
    assert parse_config({}).loss == "cross_entropy"
    depth = parse_config({"task": "depth", "out_channels": 1})
    assert depth.loss == "silog"


def test_round_trip_through_document():
    config = parse_config({"widths": [8, 12], "depths": [1, 2], "epochs": 3, "max_lr": 0.01})
    again = parse_config(config_to_doc(config))
    assert again == config


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="'learning_rate'"):
        parse_config({"epochs": 2, "learning_rate": 0.1})


@pytest.mark.parametrize("doc", [
    {"epochs": "ten"}, {"bypass": 1}, {"widths": [8, "x"]}, {"binarizer": 3},
    {"epochs": True}, {"epochs": 0}, {"binarizer": "ternary"}, {"loss": "silog"},
])
def test_invalid_values(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_non_object_document():
    with pytest.raises(ConfigError, match="JSON object"):
        parse_config([1, 2])


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{epochs: 3")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_file_values_are_applied(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"decoder_width": 12, "seed": 9}))
    config = load_config(path)
    assert config.model.decoder_width == 12 and config.seed == 9
