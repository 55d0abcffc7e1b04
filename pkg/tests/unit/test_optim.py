import numpy as np
import pytest

from app.errors import InvariantViolation, NonFiniteGradientError
from app.models.backbone import ParameterSet
from app.schemas.models import OptimizerConfig
from app.training.optim import AdamW


def _params() -> ParameterSet:
    return ParameterSet({"w": np.array([[1.0, -2.0], [0.5, 0.0]]), "b": np.array([0.25, -0.25])})


def test_first_step_moves_by_learning_rate_against_the_gradient_sign() -> None:
    params = _params()
    optimizer = AdamW(OptimizerConfig(learning_rate=0.1, weight_decay=0.0, eps=1e-12))
    optimizer.step([params], {"w": np.array([[3.0, -1.0], [0.2, -4.0]]), "b": np.array([-1.0, 2.0])})
    np.testing.assert_allclose(params.params["w"], [[0.9, -1.9], [0.4, 0.1]], atol=1e-9)
    np.testing.assert_allclose(params.params["b"], [0.35, -0.35], atol=1e-9)


def test_weight_decay_is_decoupled_and_skips_vectors() -> None:
    params = _params()
    optimizer = AdamW(OptimizerConfig(learning_rate=0.1, weight_decay=0.5))
    zeros = {name: np.zeros_like(value) for name, value in params.params.items()}
    optimizer.step([params], zeros)
    np.testing.assert_allclose(params.params["w"], _params().params["w"] * 0.95)
    np.testing.assert_array_equal(params.params["b"], _params().params["b"])


def test_zero_learning_rate_leaves_parameters_bit_identical() -> None:
    params = _params()
    before = params.digest()
    optimizer = AdamW(OptimizerConfig(learning_rate=0.0))
    for _ in range(3):
        optimizer.step([params], {"w": np.ones((2, 2)), "b": np.ones(2)})
    assert params.digest() == before


def test_parameters_without_gradients_are_untouched() -> None:
    params = _params()
    AdamW(OptimizerConfig(learning_rate=0.1)).step([params], {"b": np.ones(2)})
    assert params.params["w"].tobytes() == _params().params["w"].tobytes()


def test_frozen_gradient_is_an_invariant_violation() -> None:
    optimizer = AdamW(OptimizerConfig(), frozen=["w"])
    with pytest.raises(InvariantViolation, match="w"):
        optimizer.step([_params()], {"w": np.ones((2, 2))})


def test_non_finite_gradient_names_the_parameter() -> None:
    params = _params()
    with pytest.raises(NonFiniteGradientError) as excinfo:
        AdamW(OptimizerConfig()).step([params], {"b": np.array([0.0, np.nan])})
    assert excinfo.value.path == "b"
    assert params.digest() == _params().digest()
