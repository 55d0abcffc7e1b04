"""Per-layer planning gates and the gated composition of the backbone.

Gate ``i`` reads the CLS row of the hidden state *entering* layer ``i`` and
decides whether layer ``i`` runs. A bypassed layer is never evaluated and the
hidden state passes through unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.models.backbone import (
    INIT_STD,
    Backbone,
    EvaluationCounter,
    ParameterSet,
    TokenSequence,
    Weights,
    classify,
    embed,
    run_layer,
)
from app.errors import ShapeError
from app.schemas.models import PlanMode
from app.tensor import functional as F
from app.tensor.core import Tensor

EXECUTE_THRESHOLD = 0.5
_ONE = Tensor(1.0)


@dataclass(frozen=True)
class PlanningGate:
    """One-layer fully-connected gate: s = sigmoid(h_cls . A + b)."""

    A: np.ndarray
    b: float


@dataclass
class PlanTrace:
    """Scores and actions of one gated forward pass.

    In soft mode the scores are the actions, so ``actions`` stays empty.
    """

    scores: List[float]
    actions: List[int]
    mode: PlanMode
    gate_logits: List[Tensor] = field(default_factory=list, repr=False)

    @property
    def num_layers(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class ActionSample:
    action: int
    log_prob: float


class PlanningModule(ParameterSet):
    """Unshared gates ``gates.{i}.A`` (d_model,) and ``gates.{i}.b`` (1,), one per layer."""

    def __init__(self, num_layers: int, d_model: int, params: Mapping[str, np.ndarray]) -> None:
        super().__init__(params)
        self.num_layers = num_layers
        self.d_model = d_model
        for index in range(num_layers):
            if self.params[f"gates.{index}.A"].shape != (d_model,):
                raise ShapeError("gate", self.params[f"gates.{index}.A"].shape, (d_model,))

    @classmethod
    def initialize(cls, num_layers: int, d_model: int, rng: np.random.Generator) -> "PlanningModule":
        params: Dict[str, np.ndarray] = {}
        for index in range(num_layers):
            params[f"gates.{index}.A"] = rng.normal(0.0, INIT_STD, size=(d_model,))
            params[f"gates.{index}.b"] = np.zeros((1,))
        return cls(num_layers, d_model, params)

    @classmethod
    def for_backbone(cls, backbone: Backbone, rng: np.random.Generator) -> "PlanningModule":
        return cls.initialize(backbone.config.num_layers, backbone.config.d_model, rng)

    def __len__(self) -> int:
        return self.num_layers

    def gate(self, index: int) -> PlanningGate:
        return PlanningGate(A=self.params[f"gates.{index}.A"], b=float(self.params[f"gates.{index}.b"][0]))

    def set_gate(self, index: int, gate: PlanningGate) -> None:
        self.assign({f"gates.{index}.A": np.asarray(gate.A, dtype=np.float64), f"gates.{index}.b": np.array([gate.b])})


def gate_logit(h_prev: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """z = h_prev[0] . A + b as a 1 x 1 tensor; only the CLS row is read."""

    d_model = weight.shape[0]
    if len(h_prev.shape) != 2 or h_prev.shape[1] != d_model:
        raise ShapeError("gate_score", h_prev.shape, weight.shape)
    column = F.reshape(weight, (d_model, 1))
    return F.add(F.matmul(F.slice_row(h_prev, 0), column), bias)


def gate_score(h_cls_prev: np.ndarray | Sequence[float], gate: PlanningGate) -> float:
    """s = sigmoid(dot(h_cls_prev, A) + b)."""

    vector = np.asarray(h_cls_prev, dtype=np.float64).reshape(-1)
    if vector.shape != np.shape(gate.A):
        raise ShapeError("gate_score", vector.shape, np.shape(gate.A))
    z = gate_logit(Tensor(vector.reshape(1, -1)), Tensor(gate.A), Tensor([gate.b]))
    return float(F.sigmoid(z).data[0, 0])


def threshold_action(score: float) -> int:
    """1 iff score is strictly greater than 0.5; ties bypass."""

    return 1 if score > EXECUTE_THRESHOLD else 0


def sample_action(score: float, rng: np.random.Generator) -> ActionSample:
    """Bernoulli(score) draw with its log-probability."""

    action = 1 if rng.random() < score else 0
    probability = score if action else 1.0 - score
    log_prob = math.log(probability) if probability > 0 else float("-inf")
    return ActionSample(action=action, log_prob=log_prob)


def action_log_prob(logit: Tensor, action: int) -> Tensor:
    """log p(action | sigmoid(logit)) computed stably on the tape."""

    return F.log_sigmoid(logit if action else F.scale(logit, -1.0))


def merged_weights(backbone: Backbone, gates: PlanningModule) -> Dict[str, Tensor]:
    return {**backbone.tensors(), **gates.tensors()}


def gated_forward(
    seq: TokenSequence,
    backbone: Backbone,
    gates: PlanningModule,
    mode: PlanMode = "deterministic",
    rng: Optional[np.random.Generator] = None,
    *,
    weights: Optional[Weights] = None,
    forced_actions: Optional[Sequence[int]] = None,
    counter: Optional[EvaluationCounter] = None,
) -> Tuple[Tensor, PlanTrace]:
    """Run the backbone with each layer executed or bypassed by its gate.

    ``forced_actions`` overrides the gate decisions (scores are still computed);
    ``weights`` supplies tape-bound backbone and gate tensors during training.
    """

    num_layers = backbone.config.num_layers
    if len(gates) != num_layers:
        raise ValueError(f"{len(gates)} gates for {num_layers} layers")
    if forced_actions is not None:
        if mode == "soft":
            raise ValueError("forced actions are meaningless in soft mode")
        if len(forced_actions) != num_layers or any(a not in (0, 1) for a in forced_actions):
            raise ValueError(f"forced_actions must be {num_layers} values in {{0, 1}}")
    elif mode == "sampled" and rng is None:
        raise ValueError("sampled mode requires an rng")
    if mode != "sampled" and rng is not None:
        raise ValueError(f"{mode} mode does not take an rng")

    weights = weights if weights is not None else merged_weights(backbone, gates)
    trace = PlanTrace(scores=[], actions=[], mode=mode)
    h = embed(seq, backbone, weights)
    for index in range(num_layers):
        logit = gate_logit(h, weights[f"gates.{index}.A"], weights[f"gates.{index}.b"])
        if counter is not None:
            counter.gates += 1
        score_tensor = F.sigmoid(logit)
        score = float(score_tensor.data[0, 0])
        trace.gate_logits.append(logit)
        trace.scores.append(score)
        if mode == "soft":
            transformed = run_layer(h, backbone, index, weights, counter)
            h = F.add(F.mul(score_tensor, transformed), F.mul(F.sub(_ONE, score_tensor), h))
            continue
        if forced_actions is not None:
            action = int(forced_actions[index])
        elif mode == "sampled":
            action = sample_action(score, rng).action
        else:
            action = threshold_action(score)
        trace.actions.append(action)
        if action:
            h = run_layer(h, backbone, index, weights, counter)
    return classify(h, backbone, weights), trace


def executed_layer_set(trace: PlanTrace) -> List[int]:
    """1-based indices of executed layers, e.g. [1, 2, 3, 4, 5, 6]."""

    if trace.mode == "soft":
        raise ValueError("soft traces have no discrete computational path")
    return [index + 1 for index, action in enumerate(trace.actions) if action]


def render_path(layers: Sequence[int]) -> str:
    """Space-separated layer path, e.g. "1 2 3 4 5 6"."""

    return " ".join(str(layer) for layer in layers)


__all__ = [
    "ActionSample",
    "PlanTrace",
    "PlanningGate",
    "PlanningModule",
    "action_log_prob",
    "executed_layer_set",
    "gate_logit",
    "gate_score",
    "gated_forward",
    "merged_weights",
    "render_path",
    "sample_action",
    "threshold_action",
]
