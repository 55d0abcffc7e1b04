"""Joint reinforcement-learning stage for backbone and planning gates.

Per sampled forward pass the surrogate is

    task_loss + lambda2 * xi - lambda1 * sum_i A_i * log p(a_i)

whose gradient is the exact gradient of the first two terms through the
executed layers and the score pathway, plus the score-function estimate of
the gradient of -lambda1 * E[sum_i R^i]. The advantage ``A_i`` is
``G_i - b_i``: ``G_i`` is the credit coefficient (see
:func:`app.training.rewards.credit_coefficients`) and ``b_i`` a per-layer
exponential moving average of past coefficients. With
``normalize_advantage`` it is further divided by a per-layer running RMS of
past advantages, so the policy term has unit scale whatever ``beta`` and the
loss magnitude are and ``lambda2`` alone sets how tightly mu follows the
target rate. With ``rate_scope="batch"`` xi is applied once per step to the
batch-mean mu instead of to each example's mu.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.models.backbone import Backbone
from app.models.planning import PlanTrace, PlanningModule, action_log_prob, gated_forward
from app.observability import metrics
from app.observability.tracing import stage_span
from app.schemas.models import RewardBreakdown, RLConfig, TaskKind
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
from app.training.rewards import credit_coefficients, reward_breakdown
from app.training.stages import iterate_batches

logger = logging.getLogger(__name__)

STAGE = "rl-joint"


@dataclass
class SampledPass:
    """One sampled forward pass and everything the update needs from it.

    Under ``rate_scope="batch"`` the surrogate carries no xi term; the step
    adds the batch-level penalty on ``mu``.
    """

    surrogate: Tensor
    trace: PlanTrace
    breakdown: RewardBreakdown
    coefficients: List[float]
    correct: bool
    mu: Tensor


class ReinforceTrainer:
    """Owns the optimizer, the per-layer baseline and the advantage scale across RL steps."""

    def __init__(
        self,
        backbone: Backbone,
        gates: PlanningModule,
        rl: RLConfig,
        task_kind: TaskKind,
        *,
        frozen: Iterable[str] = (),
        log: Optional[TrainingLog] = None,
    ) -> None:
        if len(gates) != backbone.config.num_layers or len(gates) == 0:
            raise ValueError(f"{len(gates)} gates for {backbone.config.num_layers} layers")
        self.backbone = backbone
        self.gates = gates
        self.rl = rl
        self.task_kind = task_kind
        self.frozen = frozenset(frozen)
        self.costs = rl.costs(backbone.config.num_layers)
        self.optimizer = AdamW(rl.optimizer(), frozen=self.frozen)
        self.baseline = np.zeros(len(gates))
        self.advantage_moment = np.ones(len(gates))
        self.baseline_ready = False
        self.log = log
        self.steps = 0

    def bind(self, tape: Tape) -> Dict[str, Tensor]:
        return {
            **self.backbone.bind(tape, frozen=self.frozen),
            **self.gates.bind(tape, frozen=self.frozen),
        }

    @property
    def advantage_scale(self) -> np.ndarray:
        """Per-layer divisor of ``G_i - b_i``; all ones unless ``normalize_advantage``."""

        return self._scale_for(self.advantage_moment)

    def _scale_for(self, moment: np.ndarray) -> np.ndarray:
        if not self.rl.normalize_advantage:
            return np.ones(len(self.gates))
        return np.where(moment > 0.0, np.sqrt(np.maximum(moment, 0.0)), 1.0)

    def policy_term(
        self,
        trace: PlanTrace,
        coefficients: Sequence[float],
        baseline: Sequence[float],
        scale: Optional[Sequence[float]] = None,
    ) -> Tensor:
        """sum_i (G_i - b_i) / scale_i * log p(a_i | s_i)."""

        scale = [1.0] * len(coefficients) if scale is None else scale
        terms = [
            F.scale(action_log_prob(logit, action), float((coefficient - offset) / divisor))
            for logit, action, coefficient, offset, divisor in zip(
                trace.gate_logits, trace.actions, coefficients, baseline, scale
            )
        ]
        return F.scale(mean_of(terms), float(len(terms)))

    def rollout(
        self,
        example: EncodedExample,
        weights: Dict[str, Tensor],
        rng: Optional[np.random.Generator] = None,
        *,
        forced_actions: Optional[Sequence[int]] = None,
    ) -> SampledPass:
        """Sampled pass whose surrogate holds only the differentiable terms."""

        rl = self.rl
        logits, trace = gated_forward(
            example.seq, self.backbone, self.gates, "sampled", rng, weights=weights, forced_actions=forced_actions
        )
        loss = task_loss(logits, example.label, self.task_kind)
        mu = rate_mu_tensor(trace.gate_logits, rl.rate_semantics)
        supervised = loss
        if rl.rate_scope == "example":
            supervised = F.add(loss, F.scale(rate_deviation_penalty(mu, rl.target_rate), rl.lambda2))
        coefficients = credit_coefficients(trace.actions, self.costs, loss.item(), rl.beta, rl.credit_assignment)
        breakdown = reward_breakdown(
            trace.actions,
            trace.scores,
            self.costs,
            loss.item(),
            beta=rl.beta,
            lambda1=rl.lambda1,
            lambda2=rl.lambda2,
            target_rate=rl.target_rate,
            rate_semantics=rl.rate_semantics,
        )
        return SampledPass(
            surrogate=supervised,
            trace=trace,
            breakdown=breakdown,
            coefficients=coefficients,
            correct=is_correct(logits.data, example.label, self.task_kind),
            mu=mu,
        )

    def with_policy(
        self,
        item: SampledPass,
        baseline: Optional[Sequence[float]] = None,
        scale: Optional[Sequence[float]] = None,
    ) -> SampledPass:
        if not self.rl.lambda1:
            return item
        baseline = self.baseline if baseline is None else baseline
        scale = self.advantage_scale if scale is None else scale
        policy = self.policy_term(item.trace, item.coefficients, baseline, scale)
        return replace(item, surrogate=F.sub(item.surrogate, F.scale(policy, self.rl.lambda1)))

    def sampled_pass(
        self,
        example: EncodedExample,
        weights: Dict[str, Tensor],
        rng: Optional[np.random.Generator] = None,
        *,
        forced_actions: Optional[Sequence[int]] = None,
        baseline: Optional[Sequence[float]] = None,
        scale: Optional[Sequence[float]] = None,
    ) -> SampledPass:
        item = self.rollout(example, weights, rng, forced_actions=forced_actions)
        return self.with_policy(item, baseline, scale)

    def update_baseline(self, coefficients: Sequence[Sequence[float]]) -> None:
        """First batch sets the baseline to its mean; later batches decay into it.

        The running second moment of ``G - b`` follows the same schedule,
        measured against the baseline in force before the update.
        """

        batch = np.asarray(coefficients, dtype=np.float64)
        batch_mean = np.mean(batch, axis=0)
        if not self.baseline_ready:
            self.baseline = batch_mean
            self.advantage_moment = np.mean((batch - batch_mean) ** 2, axis=0)
            self.baseline_ready = True
            return
        decay = self.rl.baseline_decay
        moment = np.mean((batch - self.baseline) ** 2, axis=0)
        self.advantage_moment = decay * self.advantage_moment + (1.0 - decay) * moment
        self.baseline = decay * self.baseline + (1.0 - decay) * batch_mean

    def step(self, batch: Sequence[EncodedExample], rng: np.random.Generator) -> List[RewardBreakdown]:
        """One optimizer step over ``batch``; returns one breakdown per sampled pass.

        The very first batch primes the baseline before its policy terms are built.
        """

        if not batch:
            raise ValueError("empty batch")
        rl = self.rl
        tape = Tape()
        weights = self.bind(tape)
        rollouts = [
            self.rollout(example, weights, rng)
            for example in batch
            for _ in range(rl.samples_per_example)
        ]
        coefficients = [item.coefficients for item in rollouts]
        baseline, scale = self.baseline, self.advantage_scale
        if not self.baseline_ready:
            first = np.asarray(coefficients, dtype=np.float64)
            baseline = first.mean(axis=0)
            scale = self._scale_for(np.mean((first - baseline) ** 2, axis=0))
        passes = [self.with_policy(item, baseline, scale) for item in rollouts]
        objective = mean_of([item.surrogate for item in passes])
        if rl.rate_scope == "batch":
            penalty = batch_rate_penalty([item.mu for item in passes], rl.target_rate)
            objective = F.add(objective, F.scale(penalty, rl.lambda2))
        self.optimizer.step([self.backbone, self.gates], named_gradients(tape, objective))
        self.update_baseline(coefficients)
        self.steps += 1
        metrics.record_training_step(STAGE)

        breakdowns = [item.breakdown for item in passes]
        values = dict(
            task_loss=float(np.mean([b.task_loss for b in breakdowns])),
            mean_mu=float(np.mean([b.mu for b in breakdowns])),
            penalty=float(np.mean([b.penalty for b in breakdowns])),
            mean_sum_R=float(np.mean([sum(b.layer_returns) for b in breakdowns])),
            objective=float(np.mean([b.objective for b in breakdowns])),
            train_acc=float(np.mean([item.correct for item in passes])),
        )
        if self.log is not None:
            self.log.record(step=self.log.next_step(), stage=STAGE, **values)
        logger.info(
            "%s step %d loss=%.4f mu=%.3f sum_R=%.3f objective=%.4f",
            STAGE,
            self.steps,
            values["task_loss"],
            values["mean_mu"],
            values["mean_sum_R"],
            values["objective"],
        )
        return breakdowns


def train_rl(
    backbone: Backbone,
    gates: PlanningModule,
    examples: Sequence[EncodedExample],
    rl: RLConfig,
    task_kind: TaskKind,
    *,
    frozen: Iterable[str] = (),
    log: Optional[TrainingLog] = None,
) -> Tuple[ReinforceTrainer, List[RewardBreakdown]]:
    """Run ``rl.epochs`` epochs of :meth:`ReinforceTrainer.step`; sampling and shuffling share ``rl.seed``."""

    if not examples:
        raise ValueError(f"{STAGE}: empty dataset")
    trainer = ReinforceTrainer(backbone, gates, rl, task_kind, frozen=frozen, log=log)
    rng = np.random.default_rng(rl.seed)
    stream: List[RewardBreakdown] = []
    with stage_span(
        STAGE,
        target_rate=rl.target_rate,
        beta=rl.beta,
        lambda1=rl.lambda1,
        lambda2=rl.lambda2,
        rate_scope=rl.rate_scope,
        normalize_advantage=rl.normalize_advantage,
    ):
        for epoch in range(rl.epochs):
            for batch in iterate_batches(examples, rl.batch_size, rng):
                stream.extend(trainer.step(batch, rng))
            recent = stream[-len(examples) * rl.samples_per_example :]
            logger.info(
                "%s epoch %d/%d loss=%.4f mu=%.3f objective=%.4f",
                STAGE,
                epoch + 1,
                rl.epochs,
                np.mean([b.task_loss for b in recent]),
                np.mean([b.mu for b in recent]),
                np.mean([b.objective for b in recent]),
            )
    return trainer, stream


__all__ = ["ReinforceTrainer", "SampledPass", "train_rl"]
