"""Integration tests for the supervised training stages."""
import logging

import numpy as np
import pytest

from app.models.backbone import Backbone, full_forward, hidden_states
from app.models.early_exit import ExitHeads
from app.models.planning import PlanningModule, gated_forward
from app.schemas.models import OptimizerConfig, RLConfig
from app.training.log import TrainingLog
from app.training.stages import (
    iterate_batches,
    stage1_finetune_backbone,
    stage2_init_gates,
    train_exit_heads,
    train_soft_ablation,
)
from tests.factories import make_config, random_backbone, random_gates, separable_examples

SEPARABLE = make_config(vocab_size=20, max_seq_len=8, num_layers=2, d_model=16, num_heads=2, d_ff=32)


def _accuracy(backbone, examples) -> float:
    return float(np.mean([int(np.argmax(full_forward(e.seq, backbone).data)) == e.label for e in examples]))


def _cls(backbone, example):
    return hidden_states(example.seq, backbone)[-1].data[0]


@pytest.fixture(scope="module")
def trained_backbone():
    examples = separable_examples(128, seed=1)
    backbone = Backbone.initialize(SEPARABLE, np.random.default_rng(0))
    config = OptimizerConfig(learning_rate=0.02, weight_decay=0.0, batch_size=8, epochs=5)
    return stage1_finetune_backbone(backbone, examples, config, "classification"), examples


def test_batches_cover_every_example_once() -> None:
    examples = separable_examples(10)
    batches = list(iterate_batches(examples, 4, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(e.id for b in batches for e in b) == sorted(e.id for e in examples)


def test_backbone_memorizes_one_example(tmp_path) -> None:
    example = separable_examples(1, seed=2)
    backbone = random_backbone(SEPARABLE, seed=2, scale=0.1)
    log = TrainingLog(tmp_path / "train_backbone.csv")
    config = OptimizerConfig(learning_rate=0.01, weight_decay=0.0, batch_size=1, epochs=200)
    stage1_finetune_backbone(backbone, example, config, "classification", log=log)
    assert len(log.rows) == 200
    assert log.rows[-1]["task_loss"] < 0.01
    assert log.rows[0]["stage"] == "backbone-finetune"


def test_zero_learning_rate_changes_nothing(tiny_backbone, tiny_gates) -> None:
    examples = separable_examples(8, vocab_size=12)
    config = OptimizerConfig(learning_rate=0.0, batch_size=4, epochs=2)
    before = (tiny_backbone.digest(), tiny_gates.digest())
    stage1_finetune_backbone(tiny_backbone, examples, config, "classification")
    stage2_init_gates(tiny_backbone, tiny_gates, examples, config, "classification")
    assert (tiny_backbone.digest(), tiny_gates.digest()) == before
    heads = ExitHeads.initialize(tiny_backbone.config, np.random.default_rng(0))
    digest = heads.digest()
    train_exit_heads(tiny_backbone, heads, examples, config, "classification")
    assert heads.digest() == digest


def test_separable_task_is_learned_in_five_epochs(trained_backbone) -> None:
    backbone, examples = trained_backbone
    assert _accuracy(backbone, examples) >= 0.99


def test_gate_init_leaves_the_backbone_bit_identical(trained_backbone) -> None:
    backbone, examples = trained_backbone
    backbone = backbone.clone()
    digest = backbone.digest()
    gates = PlanningModule.for_backbone(backbone, np.random.default_rng(0))
    config = OptimizerConfig(learning_rate=0.05, batch_size=8, epochs=1)
    stage2_init_gates(backbone, gates, examples, config, "classification")
    assert backbone.digest() == digest


def test_gate_init_learns_to_bypass_a_harmful_layer(trained_backbone) -> None:
    trained, examples = trained_backbone
    config = make_config(vocab_size=20, max_seq_len=8, num_layers=3, d_model=16, num_heads=2, d_ff=32)
    rng = np.random.default_rng(5)
    params = {}
    for name, value in Backbone.initialize(config, rng).params.items():
        if name.startswith("layers.2."):
            params[name] = rng.normal(0.0, 2.0, size=value.shape)
        else:
            params[name] = trained.params[name]
    backbone = Backbone(config, params)
    gates = PlanningModule.for_backbone(backbone, np.random.default_rng(1))
    gates.assign({f"gates.{i}.b": np.array([3.0]) for i in range(2)})

    def harmful_gate_score() -> float:
        return float(np.mean([gated_forward(e.seq, backbone, gates, "soft")[1].scores[2] for e in examples]))

    before = harmful_gate_score()
    stage2_init_gates(backbone, gates, examples, OptimizerConfig(learning_rate=0.05, batch_size=8, epochs=3), "classification")
    assert harmful_gate_score() < before


def test_soft_ablation_with_dominant_penalty_reaches_the_target_rate(tiny_backbone, tiny_gates, tmp_path) -> None:
    examples = separable_examples(64, vocab_size=12)
    rl = RLConfig(lambda2=1000.0, target_rate=0.2, learning_rate=0.01, weight_decay=0.0, batch_size=8, epochs=10)
    log = TrainingLog(tmp_path / "soft.csv")
    train_soft_ablation(tiny_backbone, tiny_gates, examples, rl, "classification", log=log)
    recent = [row["mean_mu"] for row in log.rows[-5:]]
    assert abs(float(np.mean(recent)) - 0.2) < 0.05
    _, trace = gated_forward(examples[0].seq, tiny_backbone, tiny_gates)
    assert len(trace.actions) == 2


def test_soft_ablation_without_penalty_is_plain_soft_fine_tuning(tiny_config) -> None:
    examples = separable_examples(16, vocab_size=12)
    rl = RLConfig(lambda2=0.0, learning_rate=0.01, batch_size=8, epochs=1)
    backbone, gates = random_backbone(tiny_config), random_gates(tiny_config)
    twin_backbone, twin_gates = random_backbone(tiny_config), random_gates(tiny_config)
    train_soft_ablation(backbone, gates, examples, rl, "classification")
    train_soft_ablation(
        twin_backbone, twin_gates, examples, rl.copy(update={"target_rate": 0.9}), "classification"
    )
    assert backbone.digest() == twin_backbone.digest()
    assert gates.digest() == twin_gates.digest()


def test_exit_heads_match_the_backbone_classifier(trained_backbone) -> None:
    backbone, examples = trained_backbone
    digest = backbone.digest()
    heads = ExitHeads.initialize(backbone.config, np.random.default_rng(3))
    config = OptimizerConfig(learning_rate=0.05, weight_decay=0.0, batch_size=8, epochs=10)
    train_exit_heads(backbone, heads, examples, config, "classification")
    assert backbone.digest() == digest
    final = [
        int(np.argmax(heads.params["exits.1.w"] @ _cls(backbone, e) + heads.params["exits.1.b"])) == e.label
        for e in examples
    ]
    assert abs(float(np.mean(final)) - _accuracy(backbone, examples)) <= 0.02


@pytest.mark.parametrize("stage", ["finetune", "gates", "exits"])
def test_stages_reject_empty_datasets(tiny_backbone, tiny_gates, stage) -> None:
    config = OptimizerConfig()
    with pytest.raises(ValueError, match="empty dataset"):
        if stage == "finetune":
            stage1_finetune_backbone(tiny_backbone, [], config, "classification")
        elif stage == "gates":
            stage2_init_gates(tiny_backbone, tiny_gates, [], config, "classification")
        else:
            heads = ExitHeads.initialize(tiny_backbone.config, np.random.default_rng(0))
            train_exit_heads(tiny_backbone, heads, [], config, "classification")


def test_soft_ablation_batch_scope_holds_the_batch_mean_rate(tiny_backbone, tiny_gates, tmp_path) -> None:
    examples = separable_examples(64, vocab_size=12)
    rl = RLConfig(
        lambda2=1000.0,
        target_rate=0.7,
        learning_rate=0.01,
        weight_decay=0.0,
        batch_size=8,
        epochs=10,
        rate_scope="batch",
    )
    log = TrainingLog(tmp_path / "soft.csv")
    train_soft_ablation(tiny_backbone, tiny_gates, examples, rl, "classification", log=log)
    recent = log.rows[-5:]
    assert abs(float(np.mean([row["mean_mu"] for row in recent])) - 0.7) < 0.05
    for row in recent:
        assert row["penalty"] == pytest.approx((row["mean_mu"] - 0.7) ** 2, abs=1e-12)


def test_every_training_step_logs_an_info_line(caplog) -> None:
    examples = separable_examples(16, seed=2)
    backbone = Backbone.initialize(SEPARABLE, np.random.default_rng(0))
    config = OptimizerConfig(learning_rate=0.01, batch_size=8, epochs=2)
    with caplog.at_level(logging.INFO, logger="app.training.stages"):
        stage1_finetune_backbone(backbone, examples, config, "classification")
    steps = [r for r in caplog.records if r.levelno == logging.INFO and " step " in r.getMessage()]
    assert [r.getMessage().split(":")[0] for r in steps] == [f"backbone-finetune step {n}" for n in (1, 2, 3, 4)]
