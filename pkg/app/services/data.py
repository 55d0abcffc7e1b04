"""JSONL dataset ingestion, whitespace vocabulary and sequence encoding."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from pydantic import ValidationError

from app.errors import DatasetError
from app.models.backbone import TokenSequence
from app.schemas.models import DatasetSpec, Example, TaskKind

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED_TOKENS = (PAD, UNK, CLS, SEP)

DEFAULT_METRICS: Dict[str, str] = {
    "classification": "accuracy",
    "pair-classification": "accuracy",
    "regression": "pearson_spearman",
}


def tokenize(text: str) -> List[str]:
    return text.split()


class Vocabulary:
    """Token to id map whose first ids are the reserved tokens."""

    def __init__(self, token_to_id: Mapping[str, int]) -> None:
        missing = [token for token in RESERVED_TOKENS if token not in token_to_id]
        if missing:
            raise DatasetError(f"vocabulary lacks reserved tokens {missing}")
        self.token_to_id: Dict[str, int] = dict(token_to_id)
        self.id_to_token: Dict[int, str] = {index: token for token, index in self.token_to_id.items()}
        if len(self.id_to_token) != len(self.token_to_id):
            raise DatasetError("vocabulary ids are not unique")

    @classmethod
    def build(cls, texts: Iterable[str], *, min_frequency: int = 1) -> "Vocabulary":
        counts: Counter = Counter()
        for text in texts:
            counts.update(tokenize(text))
        token_to_id = {token: index for index, token in enumerate(RESERVED_TOKENS)}
        # first-seen order keeps ids stable for a fixed corpus
        for token, count in counts.items():
            if count >= min_frequency and token not in token_to_id:
                token_to_id[token] = len(token_to_id)
        return cls(token_to_id)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def ids(self, tokens: Sequence[str]) -> List[int]:
        unknown = self.token_to_id[UNK]
        return [self.token_to_id.get(token, unknown) for token in tokens]

    def decode(self, token_ids: Sequence[int]) -> List[str]:
        return [self.id_to_token[index] for index in token_ids]

    def encode(self, text: str, text_b: Optional[str] = None, *, max_seq_len: int) -> TokenSequence:
        """[CLS] a-tokens, then [SEP] b-tokens for pairs; segment 1 starts after [SEP]; truncated at the end."""

        token_ids = [self.token_to_id[CLS]] + self.ids(tokenize(text))
        segment_ids = [0] * len(token_ids)
        if text_b is not None:
            token_ids.append(self.token_to_id[SEP])
            segment_ids.append(0)
            b_ids = self.ids(tokenize(text_b))
            token_ids.extend(b_ids)
            segment_ids.extend([1] * len(b_ids))
        return TokenSequence(tuple(token_ids[:max_seq_len]), tuple(segment_ids[:max_seq_len]))


@dataclass(frozen=True)
class EncodedExample:
    """A model-ready example; ``label`` is a class index or a regression target."""

    id: str
    seq: TokenSequence
    label: Union[int, float]
    difficulty: Optional[str] = None


def _label_order(raw_labels: Iterable[object]) -> List[str]:
    unique = set(raw_labels)
    if all(isinstance(label, int) and not isinstance(label, bool) for label in unique):
        return [str(label) for label in sorted(unique)]
    return sorted(str(label) for label in unique)


def _parse_line(raw: str, line: int, fallback_id: str) -> Example:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON ({exc.msg})", line=line) from exc
    if not isinstance(record, dict) or "label" not in record:
        raise DatasetError("expected an object with a label", line=line)
    if "text" in record:
        text, text_b = record["text"], None
    elif "text_a" in record:
        text, text_b = record["text_a"], record.get("text_b")
    else:
        raise DatasetError("expected text or text_a/text_b", line=line)
    if isinstance(record["label"], bool) or record["label"] is None:
        raise DatasetError(f"invalid label {record['label']!r}", line=line)
    try:
        return Example(
            id=str(record.get("id", fallback_id)),
            text=text,
            text_b=text_b,
            label=record["label"],
            difficulty=record.get("difficulty"),
        )
    except ValidationError as exc:
        raise DatasetError(str(exc).replace("\n", " "), line=line) from exc


def load_dataset(
    path: Path,
    *,
    vocab: Optional[Vocabulary] = None,
    labels: Optional[Sequence[str]] = None,
    task_kind: Optional[TaskKind] = None,
    metric: Optional[str] = None,
    name: Optional[str] = None,
) -> DatasetSpec:
    """Read a JSONL split.

    Without ``vocab`` the vocabulary is built from this file (the train split).
    With ``labels`` any other classification label is rejected.
    """

    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc

    examples: List[Example] = []
    line_of: Dict[str, int] = {}
    for number, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        example = _parse_line(raw, number, fallback_id=f"{path.stem}-{number}")
        line_of[example.id] = number
        examples.append(example)

    if task_kind is None:
        if any(example.text_b is not None for example in examples):
            task_kind = "pair-classification"
        elif any(isinstance(example.label, float) for example in examples):
            task_kind = "regression"
        else:
            task_kind = "classification"

    if task_kind == "regression":
        for example in examples:
            if isinstance(example.label, str):
                raise DatasetError(f"regression label {example.label!r} is not numeric", line=line_of[example.id])
        label_space: List[str] = []
    else:
        label_space = list(labels) if labels is not None else _label_order(example.label for example in examples)
        allowed = set(label_space)
        for example in examples:
            if str(example.label) not in allowed:
                raise DatasetError(f"unknown label {example.label!r}", line=line_of[example.id])

    if vocab is None:
        vocab = Vocabulary.build(
            text for example in examples for text in (example.text, example.text_b or "")
        )
    logger.info("Loaded %d examples from %s (%s, %d labels)", len(examples), path, task_kind, len(label_space))
    return DatasetSpec(
        name=name or path.stem,
        task_kind=task_kind,
        examples=examples,
        vocab=vocab.token_to_id,
        labels=label_space,
        metric=metric or DEFAULT_METRICS[task_kind],
    )


def encode_dataset(spec: DatasetSpec, max_seq_len: int) -> List[EncodedExample]:
    vocab = Vocabulary(spec.vocab)
    index = {label: position for position, label in enumerate(spec.labels)}
    encoded = []
    for example in spec.examples:
        if spec.task_kind == "regression":
            label: Union[int, float] = float(example.label)
        else:
            label = index[str(example.label)]
        encoded.append(
            EncodedExample(
                id=example.id,
                seq=vocab.encode(example.text, example.text_b, max_seq_len=max_seq_len),
                label=label,
                difficulty=example.difficulty,
            )
        )
    return encoded


def write_jsonl(spec: DatasetSpec, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for example in spec.examples:
                record: Dict[str, object] = {"id": example.id}
                if example.text_b is None:
                    record["text"] = example.text
                else:
                    record["text_a"], record["text_b"] = example.text, example.text_b
                record["label"] = example.label
                if example.difficulty is not None:
                    record["difficulty"] = example.difficulty
                handle.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc
    return path


SPLITS = ("train", "dev", "test")


def load_splits(
    data_dir: Path,
    *,
    vocab: Optional[Vocabulary] = None,
    labels: Optional[Sequence[str]] = None,
    task_kind: Optional[TaskKind] = None,
) -> Dict[str, DatasetSpec]:
    """Load train/dev/test JSONL files from ``data_dir``; dev and test reuse the train vocabulary and labels.

    Missing dev or test files are skipped; a missing train file is an error.
    """

    data_dir = Path(data_dir)
    train_path = data_dir / "train.jsonl"
    if not train_path.is_file():
        raise FileNotFoundError(f"training split not found: {train_path}")
    train = load_dataset(train_path, vocab=vocab, labels=labels, task_kind=task_kind)
    shared = dict(vocab=Vocabulary(train.vocab), labels=train.labels, task_kind=train.task_kind, metric=train.metric)
    splits = {"train": train}
    for split in SPLITS[1:]:
        path = data_dir / f"{split}.jsonl"
        if path.is_file():
            splits[split] = load_dataset(path, **shared)
    return splits


__all__ = [
    "CLS",
    "PAD",
    "RESERVED_TOKENS",
    "SEP",
    "UNK",
    "EncodedExample",
    "Vocabulary",
    "encode_dataset",
    "load_dataset",
    "load_splits",
    "tokenize",
    "write_jsonl",
]
