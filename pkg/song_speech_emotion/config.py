"""Experiment configuration.

A config file is a flat YAML mapping, one `key: value` per line. Values are
resolved as defaults < config file < command-line overrides.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from . import SongSpeechEmotionError
from .classifiers import ARCHITECTURES, CONV_HSF_LAYOUTS, CONV_MODES, ModelSpec, TrainConfig
from .features_spectral import FeatureParams
from .hsf import FEATURE_SETS, FEATURE_TYPES
from .ravdess import TASKS, class_names

logger = logging.getLogger(__name__)

FOLD_MODES = ("utterance", "actor")


class ConfigError(SongSpeechEmotionError, ValueError):
    """Raised for unknown keys, invalid values or missing paths."""


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_root: str = "data/RAVDESS"
    cache_dir: str = "cache"
    output_dir: str = "results"
    task: str = "speech"
    feature_set: str = "L193"
    feature_type: str = "HSF"
    classifier: str = "LSTM"
    n_folds: int = 10
    fold_seed: int = 2020
    fold_mode: str = "utterance"
    seed: int = 42
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1.0e-8
    patience: int = 10
    validation_fraction: float = 0.1
    hidden_units: int = 256
    n_layers: int = 3
    dropout: float = 0.4
    conv_kernels: tuple[int, ...] = (4, 8, 12)
    conv_mode: str = "kernel_length"
    conv_hsf_layout: str = "feature_axis"
    hsf_before_padding: bool = True
    standardize: bool = True
    workers: int = 1
    rolloff_fraction: float = 0.85
    energy_blocks: int = 10
    contrast_alpha: float = 0.02
    contrast_first_edge_hz: float = 200.0
    f0_min_hz: float = 60.0
    f0_max_hz: float = 600.0
    voicing_threshold: float = 0.45
    mel_area_normalize: bool = False
    progress: bool = True

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Apply `values` on top of `base` (the defaults when omitted)."""
        known = {f.name: f for f in fields(cls)}
        defaults = cls()
        changes = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, value, getattr(defaults, key))
        return replace(base or defaults, **changes)

    @property
    def n_classes(self) -> int:
        return len(class_names(self.task))

    @property
    def class_names(self) -> tuple[str, ...]:
        return class_names(self.task)

    def validate(self, require_corpus: bool = False) -> "ExperimentConfig":
        checks = [
            (self.task in TASKS, f"task must be one of {TASKS}"),
            (self.feature_set in FEATURE_SETS, f"feature_set must be one of {FEATURE_SETS}"),
            (self.feature_type in FEATURE_TYPES, f"feature_type must be one of {FEATURE_TYPES}"),
            (self.classifier in ARCHITECTURES, f"classifier must be one of {ARCHITECTURES}"),
            (self.fold_mode in FOLD_MODES, f"fold_mode must be one of {FOLD_MODES}"),
            (self.conv_mode in CONV_MODES, f"conv_mode must be one of {CONV_MODES}"),
            (self.conv_hsf_layout in CONV_HSF_LAYOUTS, f"conv_hsf_layout must be one of {CONV_HSF_LAYOUTS}"),
            (self.n_folds >= 2, "n_folds must be >= 2"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.epochs >= 1 and self.batch_size >= 1, "epochs and batch_size must be >= 1"),
            (0 <= self.dropout < 1, "dropout must be in [0, 1)"),
            (0 <= self.validation_fraction < 1, "validation_fraction must be in [0, 1)"),
            (self.workers >= 1, "workers must be >= 1"),
            (0 < self.f0_min_hz < self.f0_max_hz, "need 0 < f0_min_hz < f0_max_hz"),
            (all(k >= 1 for k in self.conv_kernels), "conv_kernels must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if require_corpus and not Path(self.corpus_root).is_dir():
            raise ConfigError(f"corpus_root {self.corpus_root} does not exist")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            patience=self.patience,
            validation_fraction=self.validation_fraction,
            progress=self.progress,
        )

    def model_options(self) -> dict[str, Any]:
        return {
            "hidden_units": self.hidden_units,
            "n_layers": self.n_layers,
            "dropout_p": self.dropout,
            "conv_kernels": self.conv_kernels,
            "conv_mode": self.conv_mode,
            "conv_hsf_layout": self.conv_hsf_layout,
        }

    def model_spec(self, input_shape: tuple[int, int], classifier: str | None = None) -> ModelSpec:
        return ModelSpec(classifier or self.classifier, input_shape, self.n_classes, **self.model_options())

    def feature_params(self) -> FeatureParams:
        return FeatureParams(
            rolloff_fraction=self.rolloff_fraction,
            energy_blocks=self.energy_blocks,
            contrast_alpha=self.contrast_alpha,
            contrast_first_edge_hz=self.contrast_first_edge_hz,
            mel_area_normalize=self.mel_area_normalize,
            f0_min_hz=self.f0_min_hz,
            f0_max_hz=self.f0_max_hz,
            voicing_threshold=self.voicing_threshold,
        )

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values["conv_kernels"] = list(self.conv_kernels)
        return values

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, tuple):
        items = value if isinstance(value, (list, tuple)) else [value]
        if not all(isinstance(item, int) and not isinstance(item, bool) for item in items):
            raise ConfigError(f"{key} must be a list of integers, got {value!r}")
        return tuple(items)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value.upper() if key in ("feature_set", "feature_type", "classifier") else value


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        values = yaml.safe_load(path.read_text())
    except yaml.YAMLError as error:
        raise ConfigError(f"{path}: {error}") from error
    if values is None:
        return {}
    if not isinstance(values, dict) or any(isinstance(v, dict) for v in values.values()):
        raise ConfigError(f"{path}: expected a flat key: value mapping")
    return values


def parse_override(text: str) -> tuple[str, Any]:
    """Split `key=value`; the value is read with YAML scalar rules."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as error:
        raise ConfigError(f"override {text!r}: {error}") from error


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    set_options: Iterable[str] = (),
) -> ExperimentConfig:
    """Build a config from defaults, an optional file, flag overrides and `--set` pairs."""
    config = ExperimentConfig()
    if path is not None:
        config = ExperimentConfig.from_mapping(read_config_file(path), config)
    flags = {key: value for key, value in (overrides or {}).items() if value is not None}
    flags.update(parse_override(option) for option in set_options)
    if flags:
        config = ExperimentConfig.from_mapping(flags, config)
    return config.validate()
