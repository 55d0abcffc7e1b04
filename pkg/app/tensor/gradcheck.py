"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

import logging
from typing import Callable, Dict, Mapping

import numpy as np

from app.errors import InvariantViolation
from app.tensor.core import Tape, Tensor, named_gradients

logger = logging.getLogger(__name__)

ScalarFn = Callable[[Mapping[str, Tensor]], Tensor]


def _evaluate(f: ScalarFn, params: Mapping[str, np.ndarray]) -> float:
    value = f({name: Tensor(array) for name, array in params.items()})
    if value.data.size != 1:
        raise ValueError(f"finite_diff_check needs a scalar function, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def finite_diff_check(f: ScalarFn, params: Mapping[str, np.ndarray], step: float = 1e-5) -> float:
    """Return max |analytic - numeric| / max(1, |numeric|) over every parameter element.

    ``f`` receives a mapping of parameter name to Tensor and must return a scalar Tensor.
    """

    if step <= 0:
        raise ValueError("step must be positive")
    base = {name: np.asarray(array, dtype=np.float64) for name, array in params.items()}
    first, second = _evaluate(f, base), _evaluate(f, base)
    if first != second:
        raise InvariantViolation("function is not deterministic: two forward passes disagree")

    tape = Tape()
    loss = f(tape.bind(base))
    analytic: Dict[str, np.ndarray] = named_gradients(tape, loss) if loss.attached else {}

    worst = 0.0
    for name, array in base.items():
        grad = analytic.get(name, np.zeros_like(array)).reshape(-1)
        flat = array.reshape(-1)
        for index in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[index] += step
            minus[index] -= step
            numeric = (
                _evaluate(f, {**base, name: plus.reshape(array.shape)})
                - _evaluate(f, {**base, name: minus.reshape(array.shape)})
            ) / (2.0 * step)
            error = abs(grad[index] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)
    logger.debug("finite difference check: max relative error %.3e", worst)
    return worst


__all__ = ["finite_diff_check"]
