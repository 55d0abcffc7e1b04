"""Slow end-to-end checks: latency accounting on a wider model, large Monte-Carlo runs,
and the full three-stage pipeline on the easy/hard mixture."""
import itertools
import json
from dataclasses import replace

import numpy as np
import pytest

from app.engines.implementations import BackboneEngine, PlanningEngine
from app.models.backbone import Backbone
from app.models.checkpoint import ModelBundle
from app.models.early_exit import ExitHeads
from app.schemas.models import ModelConfig, OptimizerConfig, RLConfig
from app.services.bench import calibrate_cost_model, forced_layer_sweep, measure_latency
from app.services.data import EncodedExample, encode_dataset
from app.services.evaluation import evaluate, median_over_seeds, stratified_layer_means
from app.services.sweep import base_latency, sweep_entropy_thresholds, sweep_target_rate, weakly_dominates
from app.services.synthetic import gen_synthetic
from app.services.traces import collect_traces, dump_traces
from app.tensor import Tape, named_gradients
from app.training.pipeline import train_dpbert
from app.training.reinforce import ReinforceTrainer
from app.training.stages import stage1_finetune_backbone, train_exit_heads
from tests.factories import (
    action_probability,
    enumerated_policy_gradient,
    make_config,
    random_backbone,
    random_gates,
    random_sequence,
    separable_examples,
)

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
NUM_LAYERS = 6
GATES = OptimizerConfig(learning_rate=3e-4, batch_size=16, epochs=1)


def _rl(target_rate: float, seed: int = 0) -> RLConfig:
    return RLConfig(
        beta=5.0,
        lambda1=0.5,
        lambda2=100.0,
        target_rate=target_rate,
        learning_rate=1e-3,
        batch_size=16,
        epochs=3,
        seed=seed,
        normalize_advantage=True,
        rate_scope="batch",
    )


@pytest.fixture(scope="module")
def wide_bundle():
    config = make_config(vocab_size=100, max_seq_len=64, num_layers=12, d_model=128, num_heads=4, d_ff=512)
    return ModelBundle(
        config=config,
        backbone=random_backbone(config, seed=0, scale=0.1),
        task_kind="classification",
        vocab={},
        labels=["0", "1"],
        gates=random_gates(config, seed=0),
    )


@pytest.fixture(scope="module")
def wide_examples(wide_bundle):
    rng = np.random.default_rng(1)
    return [
        EncodedExample(id=str(i), seq=random_sequence(wide_bundle.config, rng, length=64), label=i % 2)
        for i in range(10)
    ]


@pytest.fixture(scope="module")
def mix():
    train = gen_synthetic("easy-hard-mix", 2000, seed=10)
    test = gen_synthetic("easy-hard-mix", 400, seed=11)
    return train, encode_dataset(train, 16), encode_dataset(test, 16)


@pytest.fixture(scope="module")
def backbones(mix):
    spec, train, _ = mix
    config = ModelConfig(
        vocab_size=len(spec.vocab), max_seq_len=16, num_layers=NUM_LAYERS, d_model=32, num_heads=2, d_ff=64
    )
    bundles = {}
    for seed in SEEDS:
        backbone = Backbone.initialize(config, np.random.default_rng(seed))
        optimizer = OptimizerConfig(learning_rate=1e-3, batch_size=16, epochs=4, seed=seed)
        stage1_finetune_backbone(backbone, train, optimizer, spec.task_kind)
        bundles[seed] = ModelBundle(
            config=config,
            backbone=backbone,
            task_kind=spec.task_kind,
            vocab=spec.vocab,
            labels=spec.labels,
            metric=spec.metric,
            stage="backbone-finetune",
        )
    return bundles


@pytest.fixture(scope="module")
def planned(backbones, mix):
    _, train, _ = mix
    return {seed: train_dpbert(backbones[seed], train, gate_config=GATES, rl=_rl(0.4, seed)) for seed in SEEDS}


@pytest.fixture(scope="module")
def high_rate_model(backbones, mix):
    _, train, _ = mix
    return train_dpbert(backbones[0], train, gate_config=GATES, rl=_rl(0.7))


def _mean_score(model, examples) -> float:
    engine = PlanningEngine(model)
    return float(np.mean([np.mean(engine.run(example.seq).scores) for example in examples]))


def _accuracy_and_layers(engine, bundle, examples):
    record, _ = evaluate(engine, examples, metric=bundle.metric, task_kind=bundle.task_kind)
    return record.metric, record.mean_executed_layers


def test_backbone_against_itself_is_a_unit_speedup(wide_bundle, wide_examples) -> None:
    engine = BackboneEngine(wide_bundle)
    base = measure_latency(engine, wide_examples, warmup=2, repeats=5)
    again = measure_latency(engine, wide_examples, warmup=2, repeats=5, base_mean_ns=base.mean_ns)
    assert 0.97 <= again.speedup <= 1.03


def test_forced_layer_counts_order_the_speedups(wide_bundle, wide_examples) -> None:
    results = dict(forced_layer_sweep(wide_bundle, wide_examples, [3, 6, 9, 12], warmup=2, repeats=5))
    speedups = [results[k].speedup for k in (3, 6, 9, 12)]
    assert all(high > low for high, low in zip(speedups, speedups[1:]))
    assert 1.5 <= results[6].speedup <= 2.3
    model = calibrate_cost_model(wide_bundle, wide_examples[:4], warmup=2, repeats=5)
    assert model.predicted_speedup(12, 6) == pytest.approx(results[6].speedup, rel=0.25)


@pytest.mark.parametrize("seed", range(20))
def test_sampled_policy_gradient_matches_the_enumerated_expectation(seed) -> None:
    num_layers = seed % 3 + 1
    config = make_config(num_layers=num_layers)
    backbone = random_backbone(config, seed=seed)
    gates = random_gates(config, seed=seed, scale=1.0)
    rl = RLConfig(beta=2.0, lambda1=1.0, lambda2=0.0)
    trainer = ReinforceTrainer(backbone, gates, rl, "classification", frozen=backbone.names())
    example = separable_examples(4, seed=seed, vocab_size=12)[seed % 4]
    names = sorted(gates.names())
    baseline = list(np.linspace(-0.5, 0.5, num_layers))
    direction = np.random.default_rng(seed + 100).normal(size=sum(gates.params[n].size for n in names))

    def project(grads) -> float:
        return float(np.concatenate([grads[n].reshape(-1) for n in names]) @ direction)

    exact = project(enumerated_policy_gradient(trainer, example))
    patterns = list(itertools.product((0, 1), repeat=num_layers))
    projected = []
    for actions in patterns:
        tape = Tape()
        item = trainer.sampled_pass(example, trainer.bind(tape), forced_actions=list(actions), baseline=baseline)
        projected.append(project(named_gradients(tape, item.surrogate)))
    probabilities = np.array([action_probability(trainer, example, actions) for actions in patterns])
    draws = np.random.default_rng(seed).choice(len(patterns), size=100_000, p=probabilities / probabilities.sum())
    samples = np.asarray(projected)[draws]
    assert abs(samples.mean() - exact) <= 3 * samples.std(ddof=1) / np.sqrt(samples.size)


@pytest.mark.parametrize("target_rate", [0.4, 0.7])
def test_mean_gate_score_lands_near_the_target_rate(planned, high_rate_model, mix, target_rate) -> None:
    _, _, test = mix
    model = planned[0] if target_rate == 0.4 else high_rate_model
    assert abs(_mean_score(model, test) - target_rate) <= 0.15


def test_high_rate_model_keeps_most_of_the_backbone_accuracy(backbones, high_rate_model, mix) -> None:
    _, _, test = mix
    bundle = backbones[0]
    base_accuracy, _ = _accuracy_and_layers(BackboneEngine(bundle), bundle, test)
    accuracy, layers = _accuracy_and_layers(PlanningEngine(high_rate_model), bundle, test)
    assert accuracy >= 0.9 * base_accuracy
    assert layers <= 0.8 * NUM_LAYERS


def test_reinforcement_is_at_least_as_accurate_as_the_soft_relaxation(backbones, planned, mix) -> None:
    _, train, test = mix
    margins = []
    for seed in SEEDS:
        bundle = backbones[seed]
        accuracy, layers = _accuracy_and_layers(PlanningEngine(planned[seed]), bundle, test)
        soft_points = []
        for rate in (0.25, 0.4, 0.55):
            soft = train_dpbert(bundle, train, gate_config=GATES, rl=_rl(rate, seed), soft=True)
            soft_accuracy, soft_layers = _accuracy_and_layers(PlanningEngine(soft), bundle, test)
            soft_points.append((soft_layers, soft_accuracy))
        soft_points.sort()
        depths = [depth for depth, _ in soft_points]
        assert depths[0] - 0.5 <= layers <= depths[-1] + 0.5
        matched = float(np.interp(layers, depths, [value for _, value in soft_points]))
        margins.append(accuracy - matched)
    assert median_over_seeds(margins) >= 0.0


def test_easy_examples_run_fewer_layers_than_hard_ones(planned, mix) -> None:
    _, _, test = mix
    gaps = []
    for seed in SEEDS:
        records = collect_traces(PlanningEngine(planned[seed]), test)
        means = stratified_layer_means((r.difficulty, len(r.executed_layers)) for r in records)
        gaps.append(means["hard"] - means["easy"])
    assert median_over_seeds(gaps) > 0.0


def test_trace_dump_summary_separates_easy_from_hard(planned, mix, tmp_path) -> None:
    _, _, test = mix
    path = tmp_path / "traces_dpbert.jsonl"
    dump_traces(PlanningEngine(planned[0]), test, path)
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(records) == len(test)
    assert {r["difficulty"] for r in records} == {"easy", "hard"}
    assert all(r["path"] == " ".join(str(layer) for layer in r["executed_layers"]) for r in records)
    summary = stratified_layer_means((r["difficulty"], len(r["executed_layers"])) for r in records)
    assert summary["easy"] <= summary["hard"]


def test_planning_curve_dominates_early_exit_on_the_shared_backbone(backbones, mix) -> None:
    spec, train, test = mix
    bundle = replace(backbones[0], exits=ExitHeads.initialize(backbones[0].config, np.random.default_rng(0)))
    train_exit_heads(
        bundle.backbone, bundle.exits, train, OptimizerConfig(learning_rate=1e-3, batch_size=16, epochs=2), spec.task_kind
    )
    examples = test[:200]
    base = base_latency(bundle, examples, warmup=1, repeats=3)
    planning = sweep_target_rate(
        bundle,
        train,
        examples,
        [0.4, 0.55, 0.7, 0.85],
        gate_config=GATES,
        rl=_rl(0.4),
        warmup=1,
        repeats=3,
        base_mean_ns=base,
    )
    early_exit = sweep_entropy_thresholds(
        bundle, examples, [0.05, 0.1, 0.2, 0.3, 0.45, 0.6], warmup=1, repeats=3, base_mean_ns=base
    )
    assert weakly_dominates(planning, early_exit)
