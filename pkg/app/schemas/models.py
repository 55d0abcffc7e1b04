"""Pydantic schemas for configs, reports, traces and API payloads."""
from __future__ import annotations

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, StrictFloat, StrictInt, StrictStr, root_validator, validator

TaskKind = Literal["classification", "regression", "pair-classification"]
PlanMode = Literal["deterministic", "sampled", "soft"]
Stage = Literal["backbone-finetune", "gate-init", "rl-joint", "soft-ablation", "exit-heads"]
Label = Union[StrictInt, StrictFloat, StrictStr]


class ModelConfig(BaseModel):
    """Shape of the encoder backbone."""

    vocab_size: int = Field(..., gt=0)
    max_seq_len: int = Field(64, ge=2, description="CLS plus at least one token")
    num_layers: int = Field(6, ge=0, description="Number of transformer layers L")
    d_model: int = Field(64, gt=0)
    num_heads: int = Field(4, gt=0)
    d_ff: int = Field(256, gt=0)
    num_classes: int = Field(2, gt=0, description="1 selects a scalar regression head")

    @root_validator(skip_on_failure=True)
    def heads_divide_width(cls, values: dict) -> dict:
        if values["d_model"] % values["num_heads"]:
            raise ValueError("d_model must be divisible by num_heads")
        return values

    @property
    def is_regression(self) -> bool:
        return self.num_classes == 1


class OptimizerConfig(BaseModel):
    """AdamW hyperparameters shared by every training stage."""

    learning_rate: float = Field(3e-4, ge=0)
    weight_decay: float = Field(0.01, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(16, gt=0)
    epochs: int = Field(5, ge=0)
    seed: int = 0


class RLConfig(BaseModel):
    """Joint reinforcement-learning stage hyperparameters."""

    beta: float = Field(5.0, ge=0, description="Weight of the task loss inside each reward")
    lambda1: float = Field(0.5, ge=0, description="Weight of the expected reward term")
    lambda2: float = Field(1.0, ge=0, description="Weight of the rate penalty")
    target_rate: float = Field(0.4, ge=0, le=1)
    layer_cost: Optional[List[float]] = Field(None, description="Per-layer cost C; defaults to all 1.0")
    learning_rate: float = Field(3e-4, ge=0)
    weight_decay: float = Field(0.01, ge=0)
    batch_size: int = Field(16, gt=0)
    epochs: int = Field(5, ge=0)
    seed: int = 0
    baseline_decay: float = Field(0.9, ge=0, le=1)
    samples_per_example: int = Field(1, gt=0)
    rate_semantics: Literal["execute", "skip"] = "execute"
    credit_assignment: Literal["causal", "layer"] = "causal"
    normalize_advantage: bool = Field(
        False, description="Divide G_i - b_i by a per-layer running RMS of past advantages"
    )
    rate_scope: Literal["example", "batch"] = Field(
        "example", description="Apply xi to each example's mu, or once to the batch-mean mu"
    )

    @validator("layer_cost")
    def costs_nonnegative(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(c < 0 for c in value):
            raise ValueError("layer costs must be non-negative")
        return value

    def costs(self, num_layers: int) -> List[float]:
        if self.layer_cost is None:
            return [1.0] * num_layers
        if len(self.layer_cost) != num_layers:
            raise ValueError(f"layer_cost has {len(self.layer_cost)} entries, model has {num_layers} layers")
        return list(self.layer_cost)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )


class ExitConfig(BaseModel):
    """Entropy early-exit policy."""

    entropy_threshold: float = Field(0.3, ge=0)
    exit_on: Literal["below", "above"] = "below"


class RewardBreakdown(BaseModel):
    """Decomposed reward and objective for one sampled forward pass."""

    layer_returns: List[float]
    task_loss: float
    mu: float
    penalty: float
    objective: float


class Example(BaseModel):
    """One labelled example before encoding."""

    id: str
    text: str = ""
    text_b: Optional[str] = None
    label: Label
    difficulty: Optional[str] = None


class DatasetSpec(BaseModel):
    """Examples plus the vocabulary and label space used to encode them."""

    name: str
    task_kind: TaskKind
    examples: List[Example]
    vocab: Dict[str, int]
    labels: List[str] = Field(default_factory=list, description="Class names by index")
    metric: str = "accuracy"


class TraceRecord(BaseModel):
    """Per-example routing record written to JSONL trace dumps."""

    example_id: str
    scores: List[float] = Field(default_factory=list)
    actions: List[int] = Field(default_factory=list)
    executed_layers: List[int]
    path: str
    logits: List[float]
    label: Optional[Label] = None
    difficulty: Optional[str] = None
    exit_layer: Optional[int] = None


class LatencyReport(BaseModel):
    """Per-instance latency for one engine, batch size 1."""

    engine: str
    per_example_ns: List[int]
    mean_ns: float
    median_ns: float
    base_mean_ns: float
    speedup: float
    mean_executed_layers: float
    mean_gate_evaluations: float
    flop_proxy: float = Field(..., description="Executed layers plus gate evaluations per example")
    metric_name: str
    metric: float
    warmup: int
    repeats: int
    threads: int = Field(1, description="BLAS threads pinned during timing")


class MetricsRecord(BaseModel):
    """One evaluated run: quality, depth, latency."""

    engine: str
    metric_name: str
    metric: float
    mean_executed_layers: float
    mean_latency_ns: Optional[float] = None
    speedup: Optional[float] = None
    seed: Optional[int] = None


class CurvePoint(BaseModel):
    """One point of a performance-latency curve."""

    variant: str
    parameter: float
    latency_fraction: float
    speedup: float
    metric: float
    mean_executed_layers: float


class ClassificationRequest(BaseModel):
    """Request body for the inference endpoint."""

    text: str = ""
    text_b: Optional[str] = None
    engine: Optional[str] = Field(None, description="Engine name; defaults to settings.default_engine")


class ClassificationResponse(BaseModel):
    """Prediction plus the computational path that produced it."""

    engine: str
    label: Label
    logits: List[float]
    executed_layers: List[int]
    path: str
    exit_layer: Optional[int] = None
    latency_ms: float
