"""Application configuration using Pydantic settings."""
from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import dotenv_values
from pydantic import BaseSettings, Field, validator

from app.schemas.models import ExitConfig, ModelConfig, OptimizerConfig, RLConfig


class Settings(BaseSettings):
    """Centralized settings loaded from a key=value file, the environment and CLI overrides."""

    app_name: str = Field("DynamicPlanningBench", description="Human friendly name of the service")
    api_v1_prefix: str = Field("/v1", description="Base prefix for versioned APIs")
    admin_prefix: str = Field("/admin", description="Prefix for administrative endpoints")
    log_level: str = Field("INFO", description="Logging level")
    telemetry_enabled: bool = Field(False, description="Enable OpenTelemetry spans around stages")
    prometheus_enabled: bool = Field(True, description="Expose the Prometheus metrics endpoint")

    seed: int = Field(0, description="Seed for data generation, initialization and sampling")
    data_dir: Path = Field(Path("data"), description="Directory holding train/dev/test JSONL splits")
    run_dir: Path = Field(Path("runs"), description="Directory for checkpoints, logs and reports")
    synthetic_kind: str = Field("easy-hard-mix", description="Generator used by gen-data")
    synthetic_size: int = Field(10000, gt=0, description="Training examples generated by gen-data")
    eval_size: int = Field(1000, gt=0, description="Dev/test examples generated by gen-data")

    max_seq_len: int = Field(32, ge=2)
    num_layers: int = Field(6, ge=0)
    d_model: int = Field(64, gt=0)
    num_heads: int = Field(4, gt=0)
    d_ff: int = Field(256, gt=0)

    learning_rate: float = Field(3e-4, ge=0)
    weight_decay: float = Field(0.01, ge=0)
    batch_size: int = Field(16, gt=0)
    epochs: int = Field(5, ge=0)

    beta: float = Field(5.0, ge=0)
    lambda1: float = Field(0.5, ge=0)
    lambda2: float = Field(100.0, ge=0, description="Rate penalty weight; large enough for mu to track target_rate")
    target_rate: float = Field(0.4, ge=0, le=1)
    layer_cost: Optional[List[float]] = Field(None, description="JSON list of per-layer costs")
    rl_learning_rate: float = Field(3e-4, ge=0)
    rl_epochs: int = Field(5, ge=0)
    baseline_decay: float = Field(0.9, ge=0, le=1)
    samples_per_example: int = Field(1, gt=0)
    rate_semantics: str = Field("execute", description="execute or skip")
    credit_assignment: str = Field("causal", description="causal or layer")
    normalize_advantage: bool = Field(True, description="Scale G - b by its per-layer running RMS")
    rate_scope: str = Field("batch", description="example or batch")

    entropy_threshold: float = Field(0.3, ge=0)
    exit_on: str = Field("below", description="below or above")

    warmup: int = Field(5, ge=0, description="Discarded forward passes per example")
    repeats: int = Field(7, ge=3, description="Timed forward passes per example")
    band_low: float = Field(1.30, gt=0, description="Lower speed-up bound of the comparison band")
    band_high: float = Field(1.96, gt=0, description="Upper speed-up bound of the comparison band")
    band_filter: bool = Field(False, description="Keep only sweep points inside the speed-up band")
    target_rates: List[float] = Field(default_factory=lambda: [0.3, 0.4, 0.55, 0.7, 0.85, 1.0])
    entropy_thresholds: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.3, 0.45, 0.6])
    truncation_depths: List[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])

    checkpoint_path: Optional[Path] = Field(None, description="Checkpoint served by the HTTP surface")
    default_engine: str = Field("dpbert", description="Engine used when a request names none")
    host: str = Field("127.0.0.1")
    port: int = Field(8000, gt=0, lt=65536)

    class Config:
        env_prefix = "DPLAN_"
        case_sensitive = False

    @validator("log_level")
    def validate_log_level(cls, value: str) -> str:  # pragma: no cover - trivial
        allowed = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}
        upper_value = value.upper()
        if upper_value not in allowed:
            raise ValueError(f"Invalid log level: {value}")
        return upper_value

    @validator("rate_semantics")
    def validate_rate_semantics(cls, value: str) -> str:
        if value not in {"execute", "skip"}:
            raise ValueError(f"rate_semantics must be execute or skip, got {value}")
        return value

    @validator("credit_assignment")
    def validate_credit_assignment(cls, value: str) -> str:
        if value not in {"causal", "layer"}:
            raise ValueError(f"credit_assignment must be causal or layer, got {value}")
        return value

    @validator("rate_scope")
    def validate_rate_scope(cls, value: str) -> str:
        if value not in {"example", "batch"}:
            raise ValueError(f"rate_scope must be example or batch, got {value}")
        return value

    @validator("exit_on")
    def validate_exit_on(cls, value: str) -> str:
        if value not in {"below", "above"}:
            raise ValueError(f"exit_on must be below or above, got {value}")
        return value

    def backbone_config(self, *, vocab_size: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            max_seq_len=self.max_seq_len,
            num_layers=self.num_layers,
            d_model=self.d_model,
            num_heads=self.num_heads,
            d_ff=self.d_ff,
            num_classes=num_classes,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )

    def rl_config(self, **overrides: object) -> RLConfig:
        values = dict(
            beta=self.beta,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            target_rate=self.target_rate,
            layer_cost=self.layer_cost,
            learning_rate=self.rl_learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.rl_epochs,
            seed=self.seed,
            baseline_decay=self.baseline_decay,
            samples_per_example=self.samples_per_example,
            rate_semantics=self.rate_semantics,
            credit_assignment=self.credit_assignment,
            normalize_advantage=self.normalize_advantage,
            rate_scope=self.rate_scope,
        )
        values.update(overrides)
        return RLConfig(**values)

    def exit_config(self, **overrides: object) -> ExitConfig:
        values = dict(entropy_threshold=self.entropy_threshold, exit_on=self.exit_on)
        values.update(overrides)
        return ExitConfig(**values)


def parse_value(raw: str | None) -> object:
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def read_config_file(path: Path) -> Dict[str, object]:
    """Parse a plain key=value file; values that read as JSON (numbers, lists, booleans) are decoded."""

    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return {key.lower(): parse_value(value) for key, value in dotenv_values(path).items()}


def load_settings(config_file: Path | None = None, **overrides: object) -> Settings:
    """Build settings from an optional key=value file plus explicit overrides.

    Overrides win over the file, which wins over ``DPLAN_*`` environment variables.
    Unknown keys are rejected.
    """

    values: Dict[str, object] = read_config_file(config_file) if config_file is not None else {}
    values.update(overrides)
    return Settings(**values)


@lru_cache()
def get_settings() -> Settings:
    """Return a cached instance of settings.

    Using lru_cache avoids re-reading environment variables repeatedly.
    """

    return Settings()
