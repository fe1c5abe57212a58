"""Run configuration: nested dataclasses, flat dotted-key JSON, CLI overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(Exception):
    pass


@dataclass
class DataConfig:
    manifest: Optional[str] = None
    # synthetic generator settings, used when no manifest is given
    synth_n: int = 200
    synth_roi: int = 16
    synth_t: int = 256
    synth_classes: int = 2
    synth_seed: int = 0
    synth_noise: float = 0.3


@dataclass
class ModelConfig:
    K: int = 2                   # cascade levels; 0 = single raw band
    n_roi: int = 0               # filled from the dataset
    t_len: int = 0
    n_classes: int = 0
    w_low: int = 5
    w_high: int = 3
    leaky_slope: float = 0.01
    init_noise: float = 0.01
    d_cross: int = 32
    gcn_dims: list = field(default_factory=lambda: [64, 64])
    final_activation: bool = False
    mlp_hidden: int = 128
    lambda_init: float = 0.1
    dt_mode: str = "dynamic"     # dynamic | fixed25
    beta: float = 0.5
    fixed_q: float = 0.25
    intra_binary: bool = False

    def validate(self) -> None:
        if self.K < 0:
            raise ConfigError(f"model.K must be >= 0, got {self.K}")
        if self.w_low % 2 == 0 or self.w_high % 2 == 0:
            raise ConfigError("model.w_low and model.w_high must be odd")
        if self.dt_mode not in ("dynamic", "fixed25"):
            raise ConfigError(f"model.dt_mode must be 'dynamic' or 'fixed25', got {self.dt_mode!r}")
        if not self.gcn_dims:
            raise ConfigError("model.gcn_dims needs at least one layer")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 0.001
    use_div: bool = True
    use_sparse: bool = True
    class_weighted: bool = False


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    patience: int = 15
    max_epochs: int = 200
    seed: int = 0
    folds: int = 10
    split: str = "kfold"         # kfold | all (train == val == test)

    def validate(self) -> None:
        if self.patience < 1 or self.batch_size < 1:
            raise ConfigError("train.patience and train.batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("train.max_epochs must be >= 0")
        if self.split not in ("kfold", "all"):
            raise ConfigError(f"train.split must be 'kfold' or 'all', got {self.split!r}")
        if self.split == "kfold" and self.folds < 2:
            raise ConfigError("train.folds must be >= 2")


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        if self.losses.lambda1 < 0 or self.losses.lambda2 < 0:
            raise ConfigError("loss weights must be >= 0")

    def to_flat(self) -> dict[str, Any]:
        return {f"{sec}.{k}": v for sec, sub in dataclasses.asdict(self).items() for k, v in sub.items()}

    def set(self, key: str, value: Any) -> None:
        try:
            sec, name = key.split(".", 1)
            section = getattr(self, sec)
        except (ValueError, AttributeError):
            raise ConfigError(f"unknown config key {key!r}") from None
        fields = {f.name: f for f in dataclasses.fields(section)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(section, name, _coerce(getattr(section, name), value, key))


def _coerce(current: Any, value: Any, key: str) -> Any:
    if not isinstance(value, str):
        return value
    try:
        if isinstance(current, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            return json.loads(value) if value.startswith("[") else [int(v) for v in value.split(",")]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    if (current is None or isinstance(current, str)) and value.lower() in ("none", "null"):
        return None
    return value


def load_config(path=None, overrides: Optional[list[str]] = None) -> Config:
    """Defaults, then a JSON file (flat dotted keys or nested sections), then ``key=value`` overrides."""
    cfg = Config()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for key, value in _flatten(raw).items():
            cfg.set(key, value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    cfg.validate()
    return cfg


def _flatten(raw: dict) -> dict[str, Any]:
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                flat[f"{key}.{sub}"] = v
        else:
            flat[key] = value
    return flat


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n")


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)
