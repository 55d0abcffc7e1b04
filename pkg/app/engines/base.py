"""Base definitions for per-example inference engines."""
from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np

from app.models.backbone import TokenSequence
from app.models.checkpoint import ModelBundle
from app.observability import metrics


@dataclass
class Prediction:
    """Logits plus the computational path that produced them."""

    logits: np.ndarray
    executed_layers: List[int]
    gate_evaluations: int = 0
    exit_layer: Optional[int] = None
    scores: List[float] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)


class InferenceEngine(Protocol):
    """Protocol for a batch-size-1 inference engine."""

    name: str

    def run(self, seq: TokenSequence) -> Prediction:
        """Classify one encoded sequence."""


class BaseEngine(ABC):
    """Abstract base class to simplify building engines.

    ``analyze`` is the bare forward pass used by the latency harness; ``run``
    adds request metrics.
    """

    name: str

    def __init__(self, bundle: ModelBundle) -> None:
        self.bundle = bundle

    @property
    def num_layers(self) -> int:
        return self.bundle.config.num_layers

    @abstractmethod
    def analyze(self, seq: TokenSequence) -> Prediction:
        """Return the prediction for ``seq``."""

    def run(self, seq: TokenSequence) -> Prediction:
        start = time.perf_counter()
        try:
            prediction = self.analyze(seq)
        except Exception:
            metrics.record(self.name, "error", time.perf_counter() - start)
            raise
        metrics.record(self.name, "success", time.perf_counter() - start)
        metrics.record_executed_layers(self.name, len(prediction.executed_layers))
        return prediction


__all__ = ["BaseEngine", "InferenceEngine", "Prediction"]
