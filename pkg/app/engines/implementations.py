"""Engines for the backbone, dynamic planning, entropy early exit and static truncation."""
from __future__ import annotations

import logging
from typing import Dict, Optional, Sequence, Type

from app.config.settings import Settings
from app.engines.base import BaseEngine, Prediction
from app.models.backbone import EvaluationCounter, TokenSequence, full_forward
from app.models.checkpoint import ModelBundle
from app.models.early_exit import early_exit_forward
from app.models.planning import executed_layer_set, gated_forward
from app.schemas.models import ExitConfig

logger = logging.getLogger(__name__)


class BackboneEngine(BaseEngine):
    """The vanilla encoder: every layer, no gates."""

    name = "backbone"

    def analyze(self, seq: TokenSequence) -> Prediction:
        logits = full_forward(seq, self.bundle.backbone)
        return Prediction(logits=logits.data, executed_layers=list(range(1, self.num_layers + 1)))


class PlanningEngine(BaseEngine):
    """Deterministic gated inference; ``forced_actions`` pins every decision."""

    name = "dpbert"

    def __init__(self, bundle: ModelBundle, *, forced_actions: Optional[Sequence[int]] = None) -> None:
        super().__init__(bundle)
        if bundle.gates is None:
            raise ValueError("the dpbert engine needs a checkpoint with planning gates")
        self.forced_actions = list(forced_actions) if forced_actions is not None else None

    def analyze(self, seq: TokenSequence) -> Prediction:
        counter = EvaluationCounter()
        logits, trace = gated_forward(
            seq,
            self.bundle.backbone,
            self.bundle.gates,
            "deterministic",
            forced_actions=self.forced_actions,
            counter=counter,
        )
        return Prediction(
            logits=logits.data,
            executed_layers=executed_layer_set(trace),
            gate_evaluations=counter.gates,
            scores=list(trace.scores),
            actions=list(trace.actions),
        )


class EarlyExitEngine(BaseEngine):
    """First internal classifier whose entropy passes the threshold."""

    name = "early_exit"

    def __init__(self, bundle: ModelBundle, *, config: Optional[ExitConfig] = None) -> None:
        super().__init__(bundle)
        if bundle.exits is None:
            raise ValueError("the early_exit engine needs a checkpoint with exit heads")
        self.config = config or ExitConfig()

    def analyze(self, seq: TokenSequence) -> Prediction:
        logits, exit_layer = early_exit_forward(seq, self.bundle.backbone, self.bundle.exits, self.config)
        return Prediction(logits=logits.data, executed_layers=list(range(1, exit_layer + 1)), exit_layer=exit_layer)


class TruncatedEngine(BaseEngine):
    """The first ``depth`` layers followed by the backbone classifier."""

    name = "truncated"

    def __init__(self, bundle: ModelBundle, *, depth: Optional[int] = None) -> None:
        super().__init__(bundle)
        self.depth = self.num_layers if depth is None else depth
        if not 0 <= self.depth <= self.num_layers:
            raise ValueError(f"depth {self.depth} outside [0, {self.num_layers}]")

    def analyze(self, seq: TokenSequence) -> Prediction:
        logits = full_forward(seq, self.bundle.backbone, depth=self.depth)
        return Prediction(logits=logits.data, executed_layers=list(range(1, self.depth + 1)))


ENGINE_REGISTRY: Dict[str, Type[BaseEngine]] = {
    "backbone": BackboneEngine,
    "dpbert": PlanningEngine,
    "early_exit": EarlyExitEngine,
    "truncated": TruncatedEngine,
}


def create_engine(
    name: str, bundle: ModelBundle, settings: Optional[Settings] = None, **overrides: object
) -> BaseEngine:
    """Instantiate an engine from its registry key.

    Early-exit thresholds come from ``settings`` unless ``config`` is overridden.
    """

    engine_cls = ENGINE_REGISTRY.get(name)
    if engine_cls is None:
        raise ValueError(f"unknown engine {name!r}; expected one of {sorted(ENGINE_REGISTRY)}")
    if engine_cls is EarlyExitEngine and "config" not in overrides and settings is not None:
        overrides["config"] = settings.exit_config()
    logger.debug("Creating engine %s with %s", name, sorted(overrides))
    return engine_cls(bundle, **overrides)


__all__ = [
    "ENGINE_REGISTRY",
    "BackboneEngine",
    "EarlyExitEngine",
    "PlanningEngine",
    "TruncatedEngine",
    "create_engine",
]
