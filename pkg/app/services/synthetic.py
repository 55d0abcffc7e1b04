"""Seeded synthetic tasks with easy/hard difficulty tags."""
from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.schemas.models import DatasetSpec, Example
from app.services.data import Vocabulary

logger = logging.getLogger(__name__)

FILLER = tuple(f"w{index:02d}" for index in range(40))
MARKER, ANTI_MARKER, KEYWORD = "mark", "anti", "key"
MIN_FILLER, MAX_FILLER = 5, 10

Generated = Tuple[str, Optional[str], int, str]


def _filler(rng: np.random.Generator) -> List[str]:
    length = int(rng.integers(MIN_FILLER, MAX_FILLER + 1))
    return [FILLER[i] for i in rng.integers(0, len(FILLER), size=length)]


def _insert(tokens: List[str], token: str, rng: np.random.Generator) -> None:
    tokens.insert(int(rng.integers(0, len(tokens) + 1)), token)


def _easy_hard_mix(index: int, rng: np.random.Generator) -> Generated:
    """Easy: label is marker presence. Hard: both markers occur, label is marker-before-anti."""

    label = index % 2
    tokens = _filler(rng)
    if index % 4 < 2:
        if label:
            _insert(tokens, MARKER, rng)
        return " ".join(tokens), None, label, "easy"
    first, second = (MARKER, ANTI_MARKER) if label else (ANTI_MARKER, MARKER)
    positions = sorted(rng.choice(len(tokens) + 2, size=2, replace=False))
    for position, token in zip(positions, (first, second)):
        tokens.insert(int(position), token)
    return " ".join(tokens), None, label, "hard"


def _keyword_count(index: int, rng: np.random.Generator) -> Generated:
    """Label is whether the keyword occurs at least twice; counts 1 and 2 are the hard cases."""

    label = index % 2
    hard = (index // 2) % 2 == 1
    count = {(0, False): 0, (0, True): 1, (1, True): 2, (1, False): 3}[(label, hard)]
    tokens = _filler(rng)
    for _ in range(count):
        _insert(tokens, KEYWORD, rng)
    return " ".join(tokens), None, label, "hard" if hard else "easy"


def _pair_overlap(index: int, rng: np.random.Generator) -> Generated:
    """Label is whether at least half of the b-side tokens also occur on the a-side."""

    label = index % 2
    hard = (index // 2) % 2 == 1
    length = int(rng.integers(MIN_FILLER + 1, MAX_FILLER + 1))
    order = rng.permutation(len(FILLER))
    side_a = [FILLER[i] for i in order[:length]]
    unused = [FILLER[i] for i in order[length:]]
    if label:
        shared = int(np.ceil(0.6 * length)) if hard else length
    else:
        shared = int(np.floor(0.3 * length)) if hard else 0
    side_b = [side_a[i] for i in rng.choice(length, size=shared, replace=False)] + unused[: length - shared]
    side_b = [side_b[i] for i in rng.permutation(len(side_b))]
    return " ".join(side_a), " ".join(side_b), label, "hard" if hard else "easy"


def synthetic_vocabulary() -> Vocabulary:
    """Every token any generator can emit, so all splits share one vocabulary."""

    return Vocabulary.build([" ".join(FILLER + (MARKER, ANTI_MARKER, KEYWORD))])


GENERATORS: Dict[str, Tuple[Callable[[int, np.random.Generator], Generated], str]] = {
    "easy-hard-mix": (_easy_hard_mix, "classification"),
    "keyword-count": (_keyword_count, "classification"),
    "pair-overlap": (_pair_overlap, "pair-classification"),
}


def gen_synthetic(kind: str, size: int, seed: int, *, vocab: Optional[Vocabulary] = None) -> DatasetSpec:
    """Generate ``size`` examples; identical arguments give identical datasets.

    Labels alternate by index before shuffling, so classes are balanced to within one example.
    """

    if kind not in GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {sorted(GENERATORS)}")
    if size <= 0:
        raise ValueError("size must be positive")
    generator, task_kind = GENERATORS[kind]
    rng = np.random.default_rng(seed)
    generated = [generator(index, rng) for index in range(size)]
    examples = [
        Example(id=f"{kind}-{seed}-{position:06d}", text=text, text_b=text_b, label=label, difficulty=difficulty)
        for position, (text, text_b, label, difficulty) in enumerate(generated[i] for i in rng.permutation(size))
    ]
    if vocab is None:
        vocab = synthetic_vocabulary()
    logger.info("Generated %d %s examples (seed=%d)", size, kind, seed)
    return DatasetSpec(
        name=kind,
        task_kind=task_kind,
        examples=examples,
        vocab=vocab.token_to_id,
        labels=["0", "1"],
        metric="accuracy",
    )


__all__ = ["ANTI_MARKER", "GENERATORS", "KEYWORD", "MARKER", "gen_synthetic", "synthetic_vocabulary"]
