"""Task losses and prediction helpers."""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from app.schemas.models import TaskKind
from app.tensor import functional as F
from app.tensor.core import Tensor

Target = Union[int, float]


def task_loss(output: Tensor, label: Target, task_kind: TaskKind) -> Tensor:
    """Cross-entropy over softmax for classification, squared error for regression."""

    if task_kind == "regression":
        diff = F.sub(F.take(output, 0), Tensor(float(label)))
        return F.mul(diff, diff)
    num_classes = output.shape[0]
    if isinstance(label, bool) or not isinstance(label, (int, np.integer)) or not 0 <= label < num_classes:
        raise ValueError(f"label {label!r} outside [0, {num_classes})")
    return F.scale(F.take(F.log_softmax(output), int(label)), -1.0)


def predict(logits: np.ndarray, task_kind: TaskKind) -> Target:
    if task_kind == "regression":
        return float(np.asarray(logits).reshape(-1)[0])
    return int(np.argmax(logits))


def is_correct(logits: np.ndarray, label: Target, task_kind: TaskKind) -> bool:
    if task_kind == "regression":
        return False
    return predict(logits, task_kind) == label


def mean_of(values: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of scalar-like tensors, kept on the tape."""

    if not values:
        raise ValueError("mean of an empty sequence")
    total = values[0]
    for value in values[1:]:
        total = F.add(total, value)
    return F.take(F.scale(total, 1.0 / len(values)), 0)


def rate_mu_tensor(gate_logits: Sequence[Tensor], rate_semantics: str = "execute") -> Tensor:
    """mu: mean sigmoid score, or one minus it under skip semantics."""

    mu = mean_of([F.sigmoid(logit) for logit in gate_logits])
    if rate_semantics == "skip":
        mu = F.sub(Tensor(1.0), mu)
    return mu


def rate_deviation_penalty(mu: Tensor, target_rate: float) -> Tensor:
    deviation = F.sub(mu, Tensor(float(target_rate)))
    return F.mul(deviation, deviation)


def rate_penalty_tensor(gate_logits: Sequence[Tensor], target_rate: float, rate_semantics: str = "execute") -> Tensor:
    """xi = (mu - t)^2 with mu the mean sigmoid score; differentiable in the gate parameters."""

    return rate_deviation_penalty(rate_mu_tensor(gate_logits, rate_semantics), target_rate)


def batch_rate_penalty(mus: Sequence[Tensor], target_rate: float) -> Tensor:
    """xi on the batch-mean rate: only the average over the batch is held at ``target_rate``."""

    return rate_deviation_penalty(mean_of(mus), target_rate)


__all__ = [
    "batch_rate_penalty",
    "is_correct",
    "mean_of",
    "predict",
    "rate_deviation_penalty",
    "rate_mu_tensor",
    "rate_penalty_tensor",
    "task_loss",
]
