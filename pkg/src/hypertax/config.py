"""Run and dataset configuration: YAML in, validated dataclasses out.

Every hyperparameter is explicit here with its default; the fully
materialized configuration is what lands in the run manifest, so there are
no hidden code-path defaults that affect results.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .losses import HierLossConfig
from .regularizers import RegWeights
from .synth import SynthConfig
from .training import TrainSettings

__all__ = ["ConfigError", "RunConfig", "load_run_config", "load_synth_config",
           "apply_overrides"]


class ConfigError(ValueError):
    """Invalid or missing configuration; the message names the field."""


@dataclass
class RunConfig:
    run_id: str
    taxonomy: str
    mode: str = "background"
    seed: int = 0
    curvature: float = 2.0
    hidden: tuple[int, ...] = (32,)
    embed_dim: int = 8
    feature_clip: float = 2.0
    alpha: float = 5.0
    beta: float = 1.0
    score_floor: float = 1e-7
    w_dist: float = 0.01
    w_rel: float = 10.0
    tau: float = 10.0
    k: int = 3
    pseudo_labeling: bool = True
    pseudo_label_rate: float = 1.0
    use_hierarchy: bool = True
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    batch_samples: int = 6
    epochs: tuple[int, ...] = (30, 30)
    lr: tuple[float, ...] = (0.05, 0.01)
    split_ratios: tuple[float, ...] = ()

    def settings(self) -> TrainSettings:
        return TrainSettings(
            hier=HierLossConfig(self.alpha, self.beta, self.score_floor),
            reg=RegWeights(self.w_dist, self.w_rel, self.tau, self.k),
            use_hierarchy=self.use_hierarchy,
            pseudo_labeling=self.pseudo_labeling,
            pseudo_label_rate=self.pseudo_label_rate,
            batch_samples=self.batch_samples,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            poly_power=self.poly_power,
        )

    def materialized(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))


_RUN_FIELDS = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}

_TUPLE_FIELDS = {"hidden", "epochs", "lr", "split_ratios", "sigma_level"}
_REQUIRED_RUN = ("run_id", "taxonomy")


def _coerce(name: str, value):
    if name in _TUPLE_FIELDS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"field {name!r} must be a list")
        return tuple(value)
    return value


def apply_overrides(raw: dict, overrides: list[str] | None) -> dict:
    """Apply `key=value` command-line overrides on top of the file values."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        raw[key] = yaml.safe_load(text)
    return raw


def _load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return raw


def load_run_config(path, overrides: list[str] | None = None) -> RunConfig:
    raw = apply_overrides(_load_yaml(path), overrides)
    for required in _REQUIRED_RUN:
        if required not in raw:
            raise ConfigError(f"missing required field {required!r}")
    unknown = set(raw) - set(_RUN_FIELDS)
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}")
    kwargs = {k: _coerce(k, v) for k, v in raw.items()}
    cfg = RunConfig(**kwargs)
    if len(cfg.epochs) != len(cfg.lr):
        raise ConfigError("fields 'epochs' and 'lr' must have the same length")
    if cfg.mode not in ("background", "known_class"):
        raise ConfigError(f"field 'mode' must be background|known_class, got {cfg.mode!r}")
    if cfg.curvature <= 0:
        raise ConfigError("field 'curvature' must be positive")
    taxonomy = Path(cfg.taxonomy)
    if not taxonomy.is_absolute():
        taxonomy = Path(path).parent / taxonomy
        cfg.taxonomy = str(taxonomy)
    if not taxonomy.exists():
        raise ConfigError(f"field 'taxonomy': file not found at {taxonomy}")
    try:
        cfg.settings()  # validates loss and regularizer fields
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


_SYNTH_REQUIRED = ("taxonomy",)


def load_synth_config(path, overrides: list[str] | None = None):
    raw = apply_overrides(_load_yaml(path), overrides)
    for required in _SYNTH_REQUIRED:
        if required not in raw:
            raise ConfigError(f"missing required field {required!r}")
    taxonomy = Path(raw.pop("taxonomy"))
    if not taxonomy.is_absolute():
        taxonomy = Path(path).parent / taxonomy
    if not taxonomy.exists():
        raise ConfigError(f"field 'taxonomy': file not found at {taxonomy}")
    allowed = set(SynthConfig.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}")
    kwargs = {k: _coerce(k, v) for k, v in raw.items()}
    try:
        cfg = SynthConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, str(taxonomy)
