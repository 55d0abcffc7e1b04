"""Shared fixtures: tiny models and datasets that keep every test under a few seconds."""
from __future__ import annotations

from typing import List

import numpy as np
import pytest

from app.models.backbone import Backbone, TokenSequence
from app.models.checkpoint import ModelBundle
from app.models.early_exit import ExitHeads
from app.models.planning import PlanningModule
from app.schemas.models import ModelConfig
from app.services.data import EncodedExample, encode_dataset
from app.services.synthetic import gen_synthetic
from tests.factories import make_config, random_backbone, random_gates, random_sequence


@pytest.fixture
def tiny_config() -> ModelConfig:
    return make_config()


@pytest.fixture
def tiny_backbone(tiny_config: ModelConfig) -> Backbone:
    return random_backbone(tiny_config)


@pytest.fixture
def tiny_gates(tiny_config: ModelConfig) -> PlanningModule:
    return random_gates(tiny_config)


@pytest.fixture
def tiny_seq(tiny_config: ModelConfig) -> TokenSequence:
    return random_sequence(tiny_config, np.random.default_rng(7), length=5)


@pytest.fixture
def synthetic_examples() -> List[EncodedExample]:
    return encode_dataset(gen_synthetic("easy-hard-mix", 48, seed=3), max_seq_len=16)


@pytest.fixture
def synthetic_bundle() -> ModelBundle:
    spec = gen_synthetic("easy-hard-mix", 48, seed=3)
    config = ModelConfig(vocab_size=len(spec.vocab), max_seq_len=16, num_layers=3, d_model=8, num_heads=2, d_ff=16)
    return ModelBundle(
        config=config,
        backbone=random_backbone(config, seed=11, scale=0.3),
        task_kind=spec.task_kind,
        vocab=spec.vocab,
        labels=spec.labels,
        metric=spec.metric,
        gates=random_gates(config, seed=11),
        exits=ExitHeads.initialize(config, np.random.default_rng(12)),
        stage="gate-init",
    )
