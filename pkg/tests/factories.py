"""Builders for tiny models and sequences shared by the test suites."""
from __future__ import annotations

import itertools
from typing import Dict, List, Optional

import numpy as np

from app.models.backbone import Backbone, TokenSequence
from app.models.planning import PlanningModule, action_log_prob, gated_forward
from app.schemas.models import ModelConfig
from app.services.data import EncodedExample
from app.tensor import Tape, named_gradients
from app.tensor import functional as F
from app.training.losses import task_loss
from app.training.rewards import layer_rewards


def make_config(**overrides) -> ModelConfig:
    values = dict(vocab_size=12, max_seq_len=8, num_layers=2, d_model=8, num_heads=2, d_ff=16, num_classes=2)
    values.update(overrides)
    return ModelConfig(**values)


def random_backbone(config: ModelConfig, seed: int = 0, scale: float = 0.5) -> Backbone:
    """Backbone with O(1) weights so layers, gates and embeddings are far from degenerate."""

    rng = np.random.default_rng(seed)
    backbone = Backbone.initialize(config, rng)
    backbone.assign(
        {
            name: rng.normal(0.0, scale, size=value.shape) + (1.0 if name.endswith(".gain") else 0.0)
            for name, value in backbone.params.items()
        }
    )
    return backbone


def random_gates(config: ModelConfig, seed: int = 0, scale: float = 0.5) -> PlanningModule:
    rng = np.random.default_rng(seed + 1000)
    gates = PlanningModule.initialize(config.num_layers, config.d_model, rng)
    gates.assign({name: rng.normal(0.0, scale, size=value.shape) for name, value in gates.params.items()})
    return gates


def random_sequence(config: ModelConfig, rng: np.random.Generator, length: Optional[int] = None) -> TokenSequence:
    length = length or int(rng.integers(2, config.max_seq_len + 1))
    tokens = (0,) + tuple(int(t) for t in rng.integers(1, config.vocab_size, size=length - 1))
    return TokenSequence(tokens, (0,) * length)


def separable_examples(count: int, seed: int = 0, vocab_size: int = 20, max_len: int = 6) -> List[EncodedExample]:
    """Label 0 draws tokens from the lower half of the non-reserved ids, label 1 from the upper half."""

    rng = np.random.default_rng(seed)
    middle = (4 + vocab_size) // 2
    examples = []
    for index in range(count):
        label = index % 2
        low, high = (4, middle) if label == 0 else (middle, vocab_size)
        length = int(rng.integers(1, max_len))
        tokens = (2,) + tuple(int(t) for t in rng.integers(low, high, size=length))
        examples.append(EncodedExample(id=f"sep-{index}", seq=TokenSequence(tokens, (0,) * len(tokens)), label=label))
    return examples


def action_probability(trainer, example: EncodedExample, actions) -> float:
    """p(a) under the deterministic scores of the forced path, by the chain rule."""

    _, trace = gated_forward(example.seq, trainer.backbone, trainer.gates, forced_actions=list(actions))
    return float(np.prod([s if a else 1.0 - s for s, a in zip(trace.scores, actions)]))


def enumerated_policy_gradient(trainer, example: EncodedExample) -> Dict[str, np.ndarray]:
    """Gradient of -lambda1 * sum_a p(a) * sum_i R^i(a) built on a single tape."""

    rl = trainer.rl
    tape = Tape()
    weights = trainer.bind(tape)
    total = None
    for actions in itertools.product((0, 1), repeat=len(trainer.gates)):
        logits, trace = gated_forward(
            example.seq, trainer.backbone, trainer.gates, weights=weights, forced_actions=list(actions)
        )
        rewards = layer_rewards(actions, trainer.costs, task_loss(logits, example.label, "classification").item(), rl.beta)
        log_p = None
        for logit, action in zip(trace.gate_logits, actions):
            term = action_log_prob(logit, action)
            log_p = term if log_p is None else F.add(log_p, term)
        weighted = F.scale(F.exp(log_p), sum(rewards))
        total = weighted if total is None else F.add(total, weighted)
    return named_gradients(tape, F.scale(F.take(total, 0), -rl.lambda1))
