"""Configuration documents for data generation and experiments.

Configs are pydantic models so a JSON or YAML document is validated once at
the boundary. Process-level settings (log level, worker count) come from the
environment, optionally through a ``.env`` file.
"""

import json
import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import defaults
from .errors import ConfigError
from .nn import MlpSpec
from .state import ModelKind, UTask

load_dotenv()


def log_level() -> str:
    return os.getenv("IDVAE_LOG_LEVEL", defaults.DEFAULT_LOG_LEVEL).upper()


def max_workers() -> int:
    raw = os.getenv("IDVAE_MAX_WORKERS", str(defaults.DEFAULT_MAX_WORKERS))
    try:
        return max(1, int(raw))
    except ValueError as e:
        raise ConfigError(f"IDVAE_MAX_WORKERS must be an integer, got {raw!r}") from e


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TclConfig(_Strict):
    """Segmented synthetic sources mixed by a random full-rank MLP."""

    d: int = Field(defaults.TCL_DIM, ge=1)
    n_segments: int = Field(defaults.TCL_SEGMENTS, ge=2)
    samples_per_segment: int = Field(defaults.TCL_SAMPLES_PER_SEGMENT, ge=1)
    n_mixing_layers: int = Field(defaults.TCL_MIXING_LAYERS, ge=1)
    mean_range: Tuple[float, float] = defaults.TCL_MEAN_RANGE
    std_range: Tuple[float, float] = defaults.TCL_STD_RANGE
    min_singular_value: float = Field(defaults.TCL_MIN_SINGULAR_VALUE, gt=0)
    mixing_slope: float = Field(defaults.LEAKY_SLOPE, gt=0, lt=1)
    seed: int = 0

    @field_validator("mean_range", "std_range")
    @classmethod
    def _ordered(cls, value):
        if value[0] > value[1]:
            raise ValueError(f"range {value} is reversed")
        return value

    @field_validator("std_range")
    @classmethod
    def _positive_std(cls, value):
        if value[0] <= 0:
            raise ValueError("std_range lower bound must be positive")
        return value

    @property
    def n_samples(self) -> int:
        return self.n_segments * self.samples_per_segment


class TrainingConfig(_Strict):
    steps: int = Field(defaults.TRAIN_STEPS, ge=0)
    batch_size: int = Field(defaults.BATCH_SIZE, ge=1)
    lr: float = Field(defaults.LEARNING_RATE, gt=0)
    eval_interval: int = Field(defaults.EVAL_INTERVAL, ge=1)
    plateau_patience: int = Field(defaults.PLATEAU_PATIENCE, ge=1)
    plateau_decay: float = Field(defaults.PLATEAU_DECAY, gt=0, lt=1)
    plateau_min_improvement: float = Field(defaults.PLATEAU_MIN_IMPROVEMENT, ge=0)


class MetricsConfig(_Strict):
    d_cca: Optional[int] = Field(None, ge=1)
    ridge: float = Field(defaults.CCA_RIDGE, ge=0)
    absolute_corr: bool = True
    include_self_pairs: bool = False
    fit_fraction: float = Field(defaults.FIT_FRACTION, gt=0, lt=1)


class IdentifiabilityConfig(_Strict):
    check_L: bool = True
    alpha: float = Field(defaults.CN_PENALTY_ALPHA, ge=0)
    noise_scale: float = Field(defaults.IDENTIFIABILITY_NOISE, ge=0)


class ExperimentConfig(_Strict):
    model_kind: ModelKind
    d_z: int = Field(defaults.TCL_DIM, ge=1)
    K: Optional[int] = Field(None, ge=1)
    encoder_hidden: Tuple[int, ...] = defaults.ENCODER_HIDDEN
    decoder_hidden: Tuple[int, ...] = defaults.DECODER_HIDDEN
    activation_slope: float = Field(defaults.LEAKY_SLOPE, gt=0, lt=1)
    dropout_rate: float = Field(defaults.DROPOUT_RATE, ge=0, lt=1)
    decoder_log_var: float = defaults.DECODER_LOG_VAR
    dataset: Optional[TclConfig] = None
    dataset_path: Optional[str] = None
    eval_fraction: float = Field(defaults.EVAL_FRACTION, gt=0, lt=1)
    u_task: UTask = UTask.SEGMENTS
    rademacher_bits: int = Field(defaults.RADEMACHER_BITS, ge=1, le=20)
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    identifiability: IdentifiabilityConfig = Field(default_factory=IdentifiabilityConfig)
    output_dir: str = "output"

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, value):
        if not value:
            raise ValueError("seeds must be non-empty")
        if len(set(value)) != len(value):
            raise ValueError(f"seeds must be distinct, got {value}")
        return value

    @model_validator(mode="after")
    def _one_dataset_source(self):
        if (self.dataset is None) == (self.dataset_path is None):
            raise ValueError("give exactly one of 'dataset' or 'dataset_path'")
        if self.u_task is UTask.RADEMACHER and self.model_kind is not ModelKind.IVAE:
            raise ValueError("the rademacher u-task conditions an iVAE")
        return self

    def n_components(self, n_segments: int) -> int:
        """Number of u values (iVAE) or mixture components (VaDE)."""
        if self.model_kind is ModelKind.VAE:
            return 1
        if self.model_kind is ModelKind.IVAE:
            if self.u_task is UTask.RADEMACHER:
                return 2**self.rademacher_bits
            return n_segments
        return self.K if self.K is not None else defaults.VADE_COMPONENTS

    def encoder_spec(self, d_x: int, n_components: int) -> MlpSpec:
        d_in = d_x + (n_components if self.model_kind is ModelKind.IVAE else 0)
        return MlpSpec(
            layer_widths=(d_in, *self.encoder_hidden, 2 * self.d_z),
            activation_slope=self.activation_slope,
            dropout_rate=self.dropout_rate,
        )

    def decoder_spec(self, d_x: int) -> MlpSpec:
        return MlpSpec(
            layer_widths=(self.d_z, *self.decoder_hidden, d_x),
            activation_slope=self.activation_slope,
            dropout_rate=self.dropout_rate,
        )


def _read_document(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            if path.suffix.lower() in (".yaml", ".yml"):
                data = yaml.safe_load(f)
                data = {} if data is None else data
            else:
                data = json.load(f)
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return data


def _validate(model, data: dict, path):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    return _validate(ExperimentConfig, _read_document(path), path)


def load_tcl_config(path: Union[str, Path]) -> TclConfig:
    """Accept a bare TclConfig or an experiment document carrying one."""
    data = _read_document(path)
    if "model_kind" in data:
        data = data.get("dataset") or {}
    return _validate(TclConfig, data, path)
