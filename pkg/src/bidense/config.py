"""Run configuration documents.

A run config is a flat JSON object whose keys are the fields of
:class:`~bidense.network.ModelConfig` and :class:`~bidense.train.TrainConfig`.
Missing keys take the defaults; unknown keys are rejected before any work
starts.  ``loss`` defaults to ``silog`` for the depth task.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .network import DEPTH, ModelConfig
from .train import CROSS_ENTROPY, SILOG, TrainConfig

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"model"}
_LISTS = {"depths", "widths"}
_BOOLS = {"bypass", "full_precision", "per_channel_stats"}
_STRINGS = {"binarizer", "task", "activation", "loss"}


class ConfigError(ValueError):
    pass


def _check_type(key: str, value):
    if key in _LISTS:
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                             for v in value)
    elif key in _BOOLS:
        ok = isinstance(value, bool)
    elif key in _STRINGS:
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"config key {key!r} has an invalid value {value!r}")


def parse_config(doc: dict) -> TrainConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - MODEL_KEYS - TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for key, value in doc.items():
        _check_type(key, value)
    model_kw = {k: v for k, v in doc.items() if k in MODEL_KEYS}
    train_kw = {k: v for k, v in doc.items() if k in TRAIN_KEYS}
    try:
        model = ModelConfig(**model_kw)
        train_kw.setdefault("loss", SILOG if model.task == DEPTH else CROSS_ENTROPY)
        return TrainConfig(model=model, **train_kw)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def load_config(path) -> TrainConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(doc)


def config_to_doc(config: TrainConfig) -> dict:
    doc = config.model.to_dict()
    doc.update({k: v for k, v in config.to_dict().items() if k != "model"})
    return doc
