"""Entropy-threshold early exit over internal CLS classifiers."""
from __future__ import annotations

from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.special import entr, softmax

from app.models.backbone import (
    INIT_STD,
    Backbone,
    EvaluationCounter,
    ParameterSet,
    TokenSequence,
    Weights,
    classify_with,
    embed,
    run_layer,
)
from app.schemas.models import ExitConfig, ModelConfig
from app.tensor.core import Tensor

NORMALIZATION_TOLERANCE = 1e-9


class ExitHeads(ParameterSet):
    """One classifier per layer, ``exits.{i}.w`` (C, d) and ``exits.{i}.b`` (C,); the last is the final head."""

    def __init__(self, num_layers: int, params: Mapping[str, np.ndarray]) -> None:
        super().__init__(params)
        if len(self.params) != 2 * num_layers:
            raise ValueError(f"expected {num_layers} exit heads, got {len(self.params) // 2}")
        self.num_layers = num_layers

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "ExitHeads":
        if config.is_regression:
            raise ValueError("entropy early exit needs a classification head")
        params: Dict[str, np.ndarray] = {}
        for index in range(config.num_layers):
            params[f"exits.{index}.w"] = rng.normal(0.0, INIT_STD, size=(config.num_classes, config.d_model))
            params[f"exits.{index}.b"] = np.zeros((config.num_classes,))
        return cls(config.num_layers, params)

    def __len__(self) -> int:
        return self.num_layers


def entropy(probs: np.ndarray) -> float:
    """-sum p ln p with 0 ln 0 = 0."""

    probs = np.asarray(probs, dtype=np.float64)
    if (probs < 0).any() or abs(probs.sum() - 1.0) > NORMALIZATION_TOLERANCE:
        raise ValueError("entropy expects a normalized probability vector")
    return float(entr(probs).sum())


def should_exit(value: float, config: ExitConfig) -> bool:
    if config.exit_on == "below":
        return value < config.entropy_threshold
    return value > config.entropy_threshold


def early_exit_forward(
    seq: TokenSequence,
    backbone: Backbone,
    heads: ExitHeads,
    config: ExitConfig,
    *,
    weights: Optional[Weights] = None,
    counter: Optional[EvaluationCounter] = None,
) -> Tuple[Tensor, int]:
    """Run layers in order and return the first head whose entropy passes the threshold.

    Layers after the exit are never evaluated; ``exit_layer`` is 1-based.
    """

    num_layers = backbone.config.num_layers
    if backbone.config.is_regression:
        raise ValueError("entropy early exit needs a classification head")
    if num_layers == 0 or len(heads) != num_layers:
        raise ValueError(f"{len(heads)} exit heads for {num_layers} layers")
    weights = weights if weights is not None else {**backbone.tensors(), **heads.tensors()}
    h = embed(seq, backbone, weights)
    for index in range(num_layers):
        h = run_layer(h, backbone, index, weights, counter)
        logits = classify_with(h, weights[f"exits.{index}.w"], weights[f"exits.{index}.b"])
        if index == num_layers - 1:
            break
        if should_exit(entropy(softmax(logits.data)), config):
            return logits, index + 1
    return logits, num_layers


__all__ = ["ExitHeads", "early_exit_forward", "entropy", "should_exit"]
