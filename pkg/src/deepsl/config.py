"""TOML run configuration with [model], [train] and [data] sections."""

from __future__ import annotations

import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .learner import TrainConfig

MODEL_KEYS = {"d", "hidden", "learn_v", "head_bias", "ablation", "init_scheme"}
DATA_KEYS = {"label_column"}
TRAIN_KEYS = set(TrainConfig.field_names()) - MODEL_KEYS

_INT_KEYS = {"epochs", "batch_size", "d", "seed", "knots", "max_steps", "threads"}
_BOOL_KEYS = {"learn_v", "head_bias", "ablation", "freeze_knot_positions"}
_STR_KEYS = {"loss", "init_scheme", "label_column"}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    label_column: str = "label"


def _check_type(key, value):
    if key in _BOOL_KEYS:
        ok = isinstance(value, bool)
    elif key in _INT_KEYS:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif key in _STR_KEYS:
        ok = isinstance(value, str)
    elif key == "hidden":
        ok = isinstance(value, list) and all(isinstance(v, int) and v > 0 for v in value)
    else:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"bad value for {key!r}: {value!r}")


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    allowed = {"model": MODEL_KEYS, "train": TRAIN_KEYS, "data": DATA_KEYS}
    values, label_column = {}, "label"
    for section, body in doc.items():
        if section not in allowed or not isinstance(body, dict):
            raise ConfigError(f"unknown section [{section}]")
        for key, value in body.items():
            if key not in allowed[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            _check_type(key, value)
            if key == "label_column":
                label_column = value
            else:
                values[key] = value
    try:
        return RunConfig(TrainConfig(**values), label_column)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
