"""AdamW with decoupled weight decay and a frozen-parameter guard."""
from __future__ import annotations

import logging
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

from app.errors import InvariantViolation, NonFiniteGradientError
from app.models.backbone import ParameterSet
from app.schemas.models import OptimizerConfig

logger = logging.getLogger(__name__)


class AdamW:
    """Per-parameter first/second moments keyed by parameter path.

    Weight decay applies to matrices only; vectors (biases, gains, gate weights) are not decayed.
    """

    def __init__(self, config: OptimizerConfig, *, frozen: Iterable[str] = ()) -> None:
        self.config = config
        self.frozen = frozenset(frozen)
        self.first: Dict[str, np.ndarray] = {}
        self.second: Dict[str, np.ndarray] = {}
        self.steps = 0

    def check(self, grads: Mapping[str, np.ndarray]) -> None:
        leaked = sorted(self.frozen.intersection(grads))
        if leaked:
            raise InvariantViolation(f"frozen parameters received gradients: {', '.join(leaked[:5])}")
        for name, grad in grads.items():
            if not np.isfinite(grad).all():
                raise NonFiniteGradientError(name)

    def step(self, parameter_sets: Sequence[ParameterSet], grads: Mapping[str, np.ndarray]) -> None:
        self.check(grads)
        self.steps += 1
        cfg = self.config
        correction1 = 1.0 - cfg.beta1**self.steps
        correction2 = 1.0 - cfg.beta2**self.steps
        for parameter_set in parameter_sets:
            updates: Dict[str, np.ndarray] = {}
            for name, value in parameter_set.params.items():
                grad = grads.get(name)
                if grad is None:
                    continue
                first = cfg.beta1 * self.first.get(name, 0.0) + (1.0 - cfg.beta1) * grad
                second = cfg.beta2 * self.second.get(name, 0.0) + (1.0 - cfg.beta2) * grad * grad
                self.first[name], self.second[name] = first, second
                direction = (first / correction1) / (np.sqrt(second / correction2) + cfg.eps)
                decay = cfg.weight_decay if value.ndim >= 2 else 0.0
                updates[name] = value - cfg.learning_rate * (direction + decay * value)
            if updates:
                parameter_set.assign(updates)


__all__ = ["AdamW"]
