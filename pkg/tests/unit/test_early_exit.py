import math

import numpy as np
import pytest

from app.models.backbone import EvaluationCounter, classify_with, hidden_states
from app.models.early_exit import ExitHeads, early_exit_forward, entropy, should_exit
from app.schemas.models import ExitConfig
from app.tensor import Tensor
from tests.factories import make_config, random_backbone, random_sequence


@pytest.fixture
def exit_model():
    config = make_config(num_layers=4)
    backbone = random_backbone(config, seed=2)
    heads = ExitHeads.initialize(config, np.random.default_rng(3))
    heads.assign({name: np.random.default_rng(4).normal(0.0, 1.0, size=v.shape) for name, v in heads.params.items()})
    return backbone, heads


def test_entropy_examples() -> None:
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2.0))
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy([0.9, 0.1]) == pytest.approx(0.325083, abs=1e-6)


@pytest.mark.parametrize("probs", [[0.6, 0.6], [1.2, -0.2], [0.3, 0.3]])
def test_entropy_rejects_unnormalized_vectors(probs) -> None:
    with pytest.raises(ValueError):
        entropy(probs)


def test_exit_direction() -> None:
    assert should_exit(0.1, ExitConfig(entropy_threshold=0.2))
    assert not should_exit(0.2, ExitConfig(entropy_threshold=0.2))
    assert should_exit(0.3, ExitConfig(entropy_threshold=0.2, exit_on="above"))


def test_infinite_threshold_exits_at_the_first_layer(exit_model, tiny_seq) -> None:
    backbone, heads = exit_model
    counter = EvaluationCounter()
    _, exit_layer = early_exit_forward(tiny_seq, backbone, heads, ExitConfig(entropy_threshold=math.inf), counter=counter)
    assert exit_layer == 1
    assert counter.layers == 1


def test_zero_threshold_runs_every_layer_with_the_final_head(exit_model, tiny_seq) -> None:
    backbone, heads = exit_model
    logits, exit_layer = early_exit_forward(tiny_seq, backbone, heads, ExitConfig(entropy_threshold=0.0))
    h_last = hidden_states(tiny_seq, backbone)[-1]
    expected = classify_with(h_last, Tensor(heads.params["exits.3.w"]), Tensor(heads.params["exits.3.b"]))
    assert exit_layer == 4
    assert logits.data.tobytes() == expected.data.tobytes()


def test_exit_layer_shrinks_as_the_threshold_grows(exit_model) -> None:
    backbone, heads = exit_model
    rng = np.random.default_rng(5)
    thresholds = [0.0, 0.2, 0.4, 0.6, 0.69, math.inf]
    for _ in range(20):
        length = int(rng.integers(2, 9))
        seq = random_sequence(backbone.config, rng, length)
        exits = []
        for threshold in thresholds:
            counter = EvaluationCounter()
            _, exit_layer = early_exit_forward(seq, backbone, heads, ExitConfig(entropy_threshold=threshold), counter=counter)
            assert counter.layers == exit_layer
            exits.append(exit_layer)
        assert exits == sorted(exits, reverse=True)


def test_early_exit_rejects_regression_and_mismatched_heads(exit_model, tiny_seq) -> None:
    backbone, _ = exit_model
    with pytest.raises(ValueError):
        ExitHeads.initialize(make_config(num_classes=1), np.random.default_rng(0))
    short = ExitHeads.initialize(make_config(num_layers=2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        early_exit_forward(tiny_seq, backbone, short, ExitConfig())
