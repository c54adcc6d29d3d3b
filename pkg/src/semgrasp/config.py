"""Run configuration: a flat TOML file whose keys mirror RunConfig fields."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .network import GRASP_FEATURES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train_data: str = ""
    test_data: str = ""
    train_split: str = "train"
    eval_split: str = "test"
    input_mode: str = "rgb"
    grasp_feature: str = "C3"
    use_feature_filtering: bool = True
    use_feature_fusion: bool = True
    channels: list = field(default_factory=lambda: [16, 32, 64, 64, 64])
    alpha: float = 0.5
    lambda_neg: float = 0.1
    epochs: int = 100
    batch_size: int = 1
    learning_rate: float = 1e-4
    lr_decay_per_epoch: float = 8e-5
    seed: int = 0
    deterministic: bool = True
    augment: bool = True
    teacher_forcing: bool = True
    inference_masks: str = "predicted"
    min_area: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.input_mode not in ("rgb", "rgd"):
            raise ConfigError(f"input_mode must be 'rgb' or 'rgd', got {self.input_mode!r}")
        if self.grasp_feature not in GRASP_FEATURES:
            raise ConfigError(f"grasp_feature must be one of {GRASP_FEATURES}, got {self.grasp_feature!r}")
        if self.inference_masks not in ("predicted", "ground_truth"):
            raise ConfigError(f"inference_masks must be 'predicted' or 'ground_truth', got {self.inference_masks!r}")
        if len(self.channels) != 5 or not all(isinstance(c, int) and c > 0 for c in self.channels):
            raise ConfigError(f"channels must be five positive integers, got {self.channels!r}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.lambda_neg < 0:
            raise ConfigError(f"lambda_neg must be >= 0, got {self.lambda_neg}")
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.lr_decay_per_epoch < 0:
            raise ConfigError("lr_decay_per_epoch must be >= 0")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to the config file")


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return value
    return value


def config_from_dict(values: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    changes = {k: _coerce(k, v, getattr(base, k)) for k, v in values.items()}
    return base.replace(**changes)


def load_config(path) -> RunConfig:
    """Parse a flat TOML config; relative data paths resolve against the file."""
    path = Path(path)
    try:
        values = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not allowed (found {', '.join(nested)}); use flat keys")
    cfg = config_from_dict(values)
    for key in ("train_data", "test_data"):
        p = getattr(cfg, key)
        if p and not Path(p).is_absolute():
            cfg = cfg.replace(**{key: str((path.parent / p).resolve())})
    return cfg
