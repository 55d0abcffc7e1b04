"""Stages 2 and 3 on top of a shared stage-1 backbone."""
from __future__ import annotations

import logging
from typing import Optional, Sequence, cast

import numpy as np

from app.models.backbone import Backbone
from app.models.checkpoint import ModelBundle
from app.models.planning import PlanningModule
from app.schemas.models import OptimizerConfig, RLConfig
from app.services.data import EncodedExample
from app.training.log import TrainingLog
from app.training.reinforce import train_rl
from app.training.stages import stage2_init_gates, train_soft_ablation

logger = logging.getLogger(__name__)


def train_dpbert(
    bundle: ModelBundle,
    examples: Sequence[EncodedExample],
    *,
    gate_config: OptimizerConfig,
    rl: RLConfig,
    soft: bool = False,
    log: Optional[TrainingLog] = None,
) -> ModelBundle:
    """Copy the bundle's backbone, initialize gates under the soft relaxation, then train jointly.

    ``soft`` selects the soft ablation instead of the reinforcement stage. The
    input bundle is left untouched.
    """

    backbone = cast(Backbone, bundle.backbone.clone())
    gates = PlanningModule.for_backbone(backbone, np.random.default_rng(rl.seed))
    stage2_init_gates(backbone, gates, examples, gate_config, bundle.task_kind, log=log)
    if soft:
        train_soft_ablation(backbone, gates, examples, rl, bundle.task_kind, log=log)
        stage = "soft-ablation"
    else:
        train_rl(backbone, gates, examples, rl, bundle.task_kind, log=log)
        stage = "rl-joint"
    logger.info("Trained %s model at target rate %.2f", stage, rl.target_rate)
    return ModelBundle(
        config=bundle.config,
        backbone=backbone,
        task_kind=bundle.task_kind,
        vocab=bundle.vocab,
        labels=bundle.labels,
        metric=bundle.metric,
        gates=gates,
        exits=bundle.exits,
        rl_config=rl,
        stage=stage,
    )


__all__ = ["train_dpbert"]
