"""Supervised training stages: backbone fine-tuning, soft gate initialization,
the soft joint ablation, and early-exit head training.

Every stage trains on per-batch tapes and steps :class:`AdamW`; frozen
parameter sets enter the tape as constants and are digest-checked afterwards.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence

import numpy as np

from app.errors import InvariantViolation
from app.models.backbone import Backbone, ParameterSet, classify_with, full_forward, hidden_states
from app.models.early_exit import ExitHeads
from app.models.planning import PlanningModule, gated_forward
from app.observability import metrics
from app.observability.tracing import stage_span
from app.schemas.models import OptimizerConfig, RLConfig, Stage, TaskKind
from app.services.data import EncodedExample
from app.tensor import functional as F
from app.tensor.core import Tape, Tensor, named_gradients
from app.training.losses import (
    batch_rate_penalty,
    is_correct,
    mean_of,
    rate_deviation_penalty,
    rate_mu_tensor,
    task_loss,
)
from app.training.log import TrainingLog
from app.training.optim import AdamW
from app.training.rewards import execution_rate_mu

logger = logging.getLogger(__name__)


@dataclass
class StageState:
    """Stage name, frozen parameter paths and the optimizer carrying per-parameter moments."""

    stage: Stage
    frozen: FrozenSet[str]
    optimizer: AdamW
    step: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)


def iterate_batches(
    examples: Sequence[EncodedExample], batch_size: int, rng: np.random.Generator
) -> Iterator[List[EncodedExample]]:
    """One epoch of shuffled batches; the last batch may be short."""

    order = rng.permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        yield [examples[i] for i in order[start : start + batch_size]]


def _require_examples(examples: Sequence[EncodedExample], stage: Stage) -> None:
    if not examples:
        raise ValueError(f"{stage}: empty dataset")


def _finish_step(state: StageState, log: Optional[TrainingLog], **values: float) -> None:
    state.step += 1
    state.history.append(values)
    metrics.record_training_step(state.stage)
    if log is not None:
        log.record(step=log.next_step(), stage=state.stage, **values)
    logger.info("%s step %d: %s", state.stage, state.step, values)


def _check_frozen(parameter_set: ParameterSet, digest: str, stage: Stage) -> None:
    if parameter_set.digest() != digest:
        raise InvariantViolation(f"{stage}: frozen parameters changed during training")


def stage1_finetune_backbone(
    backbone: Backbone,
    examples: Sequence[EncodedExample],
    config: OptimizerConfig,
    task_kind: TaskKind,
    *,
    log: Optional[TrainingLog] = None,
) -> Backbone:
    """Fine-tune every backbone parameter on the task loss of the ungated forward pass."""

    _require_examples(examples, "backbone-finetune")
    state = StageState("backbone-finetune", frozenset(), AdamW(config))
    rng = np.random.default_rng(config.seed)
    with stage_span("backbone-finetune", epochs=config.epochs, examples=len(examples)):
        for epoch in range(config.epochs):
            for batch in iterate_batches(examples, config.batch_size, rng):
                tape = Tape()
                weights = backbone.bind(tape)
                outputs = [full_forward(example.seq, backbone, weights) for example in batch]
                loss = mean_of([task_loss(out, ex.label, task_kind) for out, ex in zip(outputs, batch)])
                state.optimizer.step([backbone], named_gradients(tape, loss))
                accuracy = float(np.mean([is_correct(out.data, ex.label, task_kind) for out, ex in zip(outputs, batch)]))
                _finish_step(state, log, task_loss=loss.item(), objective=loss.item(), train_acc=accuracy)
            logger.info("backbone-finetune epoch %d/%d loss=%.4f", epoch + 1, config.epochs, state.history[-1]["task_loss"])
    return backbone


def stage2_init_gates(
    backbone: Backbone,
    gates: PlanningModule,
    examples: Sequence[EncodedExample],
    config: OptimizerConfig,
    task_kind: TaskKind,
    *,
    log: Optional[TrainingLog] = None,
) -> PlanningModule:
    """Train gate parameters only, under the soft relaxation, with the backbone frozen."""

    _require_examples(examples, "gate-init")
    if len(gates) == 0:
        raise ValueError("gate-init: the model has no layers to gate")
    digest = backbone.digest()
    state = StageState("gate-init", frozenset(backbone.names()), AdamW(config, frozen=backbone.names()))
    rng = np.random.default_rng(config.seed)
    with stage_span("gate-init", epochs=config.epochs, examples=len(examples)):
        for epoch in range(config.epochs):
            for batch in iterate_batches(examples, config.batch_size, rng):
                tape = Tape()
                weights = {**backbone.tensors(), **gates.bind(tape)}
                losses, mus = [], []
                for example in batch:
                    logits, trace = gated_forward(example.seq, backbone, gates, "soft", weights=weights)
                    losses.append(task_loss(logits, example.label, task_kind))
                    mus.append(execution_rate_mu(trace.scores))
                loss = mean_of(losses)
                state.optimizer.step([gates], named_gradients(tape, loss))
                _finish_step(state, log, task_loss=loss.item(), mean_mu=float(np.mean(mus)), objective=loss.item())
            logger.info("gate-init epoch %d/%d loss=%.4f", epoch + 1, config.epochs, state.history[-1]["task_loss"])
    _check_frozen(backbone, digest, "gate-init")
    return gates


def train_soft_ablation(
    backbone: Backbone,
    gates: PlanningModule,
    examples: Sequence[EncodedExample],
    rl: RLConfig,
    task_kind: TaskKind,
    *,
    log: Optional[TrainingLog] = None,
) -> PlanningModule:
    """Joint soft-mode training of backbone and gates on task loss plus lambda2 * xi; no reward term."""

    _require_examples(examples, "soft-ablation")
    config = rl.optimizer()
    state = StageState("soft-ablation", frozenset(), AdamW(config))
    rng = np.random.default_rng(config.seed)
    with stage_span("soft-ablation", target_rate=rl.target_rate, lambda2=rl.lambda2, rate_scope=rl.rate_scope):
        for epoch in range(config.epochs):
            for batch in iterate_batches(examples, config.batch_size, rng):
                tape = Tape()
                weights = {**backbone.bind(tape), **gates.bind(tape)}
                objectives, losses, penalties, mu_tensors, mus = [], [], [], [], []
                for example in batch:
                    logits, trace = gated_forward(example.seq, backbone, gates, "soft", weights=weights)
                    loss = task_loss(logits, example.label, task_kind)
                    mu = rate_mu_tensor(trace.gate_logits, rl.rate_semantics)
                    losses.append(loss.item())
                    mu_tensors.append(mu)
                    mus.append(execution_rate_mu(trace.scores, rl.rate_semantics))
                    if rl.rate_scope == "example":
                        penalty = rate_deviation_penalty(mu, rl.target_rate)
                        penalties.append(penalty.item())
                        loss = F.add(loss, F.scale(penalty, rl.lambda2))
                    objectives.append(loss)
                objective = mean_of(objectives)
                if rl.rate_scope == "batch":
                    penalty = batch_rate_penalty(mu_tensors, rl.target_rate)
                    penalties.append(penalty.item())
                    objective = F.add(objective, F.scale(penalty, rl.lambda2))
                state.optimizer.step([backbone, gates], named_gradients(tape, objective))
                _finish_step(
                    state,
                    log,
                    task_loss=float(np.mean(losses)),
                    mean_mu=float(np.mean(mus)),
                    penalty=float(np.mean(penalties)),
                    objective=objective.item(),
                )
            logger.info("soft-ablation epoch %d/%d mu=%.3f", epoch + 1, config.epochs, state.history[-1]["mean_mu"])
    return gates


def train_exit_heads(
    backbone: Backbone,
    heads: ExitHeads,
    examples: Sequence[EncodedExample],
    config: OptimizerConfig,
    task_kind: TaskKind,
    *,
    log: Optional[TrainingLog] = None,
) -> ExitHeads:
    """Train every exit head on its own layer's CLS state; the backbone is frozen."""

    _require_examples(examples, "exit-heads")
    if task_kind == "regression":
        raise ValueError("exit heads need a classification task")
    if backbone.config.num_layers == 0:
        raise ValueError("exit heads need at least one layer")
    digest = backbone.digest()
    num_layers = backbone.config.num_layers
    states: Dict[str, List[Tensor]] = {
        example.id: list(hidden_states(example.seq, backbone))[1:] for example in examples
    }
    state = StageState("exit-heads", frozenset(backbone.names()), AdamW(config, frozen=backbone.names()))
    rng = np.random.default_rng(config.seed)
    with stage_span("exit-heads", epochs=config.epochs, layers=num_layers):
        for epoch in range(config.epochs):
            for batch in iterate_batches(examples, config.batch_size, rng):
                tape = Tape()
                weights = heads.bind(tape)
                per_example = []
                final_correct = []
                for example in batch:
                    layer_losses = []
                    for index, h in enumerate(states[example.id]):
                        logits = classify_with(h, weights[f"exits.{index}.w"], weights[f"exits.{index}.b"])
                        layer_losses.append(task_loss(logits, example.label, task_kind))
                    final_correct.append(is_correct(logits.data, example.label, task_kind))
                    per_example.append(F.scale(mean_of(layer_losses), float(num_layers)))
                loss = mean_of(per_example)
                state.optimizer.step([heads], named_gradients(tape, loss))
                _finish_step(state, log, task_loss=loss.item() / num_layers, objective=loss.item(), train_acc=float(np.mean(final_correct)))
            logger.info("exit-heads epoch %d/%d loss=%.4f", epoch + 1, config.epochs, state.history[-1]["task_loss"])
    _check_frozen(backbone, digest, "exit-heads")
    return heads


__all__ = [
    "StageState",
    "iterate_batches",
    "stage1_finetune_backbone",
    "stage2_init_gates",
    "train_exit_heads",
    "train_soft_ablation",
]
