"""Encoder backbone: embeddings, post-norm transformer layers and a CLS classifier."""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.errors import ShapeError
from app.schemas.models import ModelConfig
from app.tensor import functional as F
from app.tensor.core import Tape, Tensor

Weights = Mapping[str, Tensor]

INIT_STD = 0.02
NUM_SEGMENTS = 2

LAYER_PARAM_NAMES = (
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln1.gain",
    "ln1.bias",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
    "ln2.gain",
    "ln2.bias",
)


@dataclass(frozen=True)
class TokenSequence:
    """Encoded input; position ids are implicit 0..len-1 and token 0 is CLS."""

    token_ids: Tuple[int, ...]
    segment_ids: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.token_ids) != len(self.segment_ids):
            raise ValueError(
                f"token_ids and segment_ids differ in length ({len(self.token_ids)} != {len(self.segment_ids)})"
            )
        if not self.token_ids:
            raise ValueError("a sequence holds at least the CLS token")

    def __len__(self) -> int:
        return len(self.token_ids)

    def validate(self, config: ModelConfig) -> None:
        if len(self) > config.max_seq_len:
            raise ValueError(f"sequence length {len(self)} exceeds max_seq_len {config.max_seq_len}")
        for position, token in enumerate(self.token_ids):
            if not 0 <= token < config.vocab_size:
                raise ValueError(
                    f"token id {token} at position {position} outside [0, {config.vocab_size})"
                )
        for position, segment in enumerate(self.segment_ids):
            if segment not in (0, 1):
                raise ValueError(f"segment id {segment} at position {position} must be 0 or 1")


class EvaluationCounter:
    """Counts transformer-layer and gate evaluations during a forward pass."""

    def __init__(self) -> None:
        self.layers = 0
        self.gates = 0

    def reset(self) -> None:
        self.layers = 0
        self.gates = 0


class ParameterSet:
    """Named float64 arrays; updates replace arrays rather than mutating them."""

    def __init__(self, params: Mapping[str, np.ndarray]) -> None:
        self.params: Dict[str, np.ndarray] = {
            name: np.asarray(value, dtype=np.float64) for name, value in params.items()
        }
        self._constants: Optional[Dict[str, Tensor]] = None

    def names(self) -> Tuple[str, ...]:
        return tuple(self.params)

    def tensors(self) -> Dict[str, Tensor]:
        if self._constants is None:
            self._constants = {name: Tensor(value) for name, value in self.params.items()}
        return self._constants

    def bind(self, tape: Tape, *, frozen: Iterable[str] = ()) -> Dict[str, Tensor]:
        return tape.bind(self.params, frozen=frozen)

    def assign(self, updates: Mapping[str, np.ndarray]) -> None:
        for name, value in updates.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name}")
            if value.shape != self.params[name].shape:
                raise ShapeError("assign", self.params[name].shape, value.shape, detail=name)
            self.params[name] = np.asarray(value, dtype=np.float64)
        self._constants = None

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw bytes; equal digests mean bit-identical parameters."""

        hasher = hashlib.sha256()
        for name in sorted(self.params):
            array = np.ascontiguousarray(self.params[name])
            hasher.update(name.encode())
            hasher.update(str(array.shape).encode())
            hasher.update(array.tobytes())
        return hasher.hexdigest()

    def all_finite(self) -> bool:
        return all(np.isfinite(value).all() for value in self.params.values())

    def clone(self) -> "ParameterSet":
        twin = copy.copy(self)
        twin.params = {name: value.copy() for name, value in self.params.items()}
        twin._constants = None
        return twin


class Backbone(ParameterSet):
    """Embedding tables, ``L`` transformer layers and the CLS classifier."""

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray]) -> None:
        super().__init__(params)
        self.config = config
        expected = set(backbone_param_shapes(config))
        if set(self.params) != expected:
            missing = sorted(expected - set(self.params))
            extra = sorted(set(self.params) - expected)
            raise ValueError(f"backbone parameters mismatch; missing={missing} extra={extra}")

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "Backbone":
        params: Dict[str, np.ndarray] = {}
        for name, shape in backbone_param_shapes(config).items():
            if name.endswith(".gain"):
                params[name] = np.ones(shape)
            elif len(shape) == 1:
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.normal(0.0, INIT_STD, size=shape)
        return cls(config, params)

    def layer_names(self, index: int) -> Tuple[str, ...]:
        return tuple(f"layers.{index}.{name}" for name in LAYER_PARAM_NAMES)


def backbone_param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, d_ff = config.d_model, config.d_ff
    shapes: Dict[str, Tuple[int, ...]] = {
        "emb.word": (config.vocab_size, d),
        "emb.pos": (config.max_seq_len, d),
        "emb.seg": (NUM_SEGMENTS, d),
    }
    for index in range(config.num_layers):
        prefix = f"layers.{index}."
        for proj in ("q", "k", "v", "o"):
            shapes[f"{prefix}attn.w{proj}"] = (d, d)
            shapes[f"{prefix}attn.b{proj}"] = (d,)
        shapes[f"{prefix}ln1.gain"] = (d,)
        shapes[f"{prefix}ln1.bias"] = (d,)
        shapes[f"{prefix}ffn.w1"] = (d, d_ff)
        shapes[f"{prefix}ffn.b1"] = (d_ff,)
        shapes[f"{prefix}ffn.w2"] = (d_ff, d)
        shapes[f"{prefix}ffn.b2"] = (d,)
        shapes[f"{prefix}ln2.gain"] = (d,)
        shapes[f"{prefix}ln2.bias"] = (d,)
    shapes["classifier.w"] = (config.num_classes, d)
    shapes["classifier.b"] = (config.num_classes,)
    return shapes


def layer_weights(weights: Weights, index: int) -> Dict[str, Tensor]:
    prefix = f"layers.{index}."
    return {name: weights[prefix + name] for name in LAYER_PARAM_NAMES}


def embed(seq: TokenSequence, backbone: Backbone, weights: Optional[Weights] = None) -> Tensor:
    """h0[i] = word[token_i] + pos[i] + seg[segment_i]."""

    seq.validate(backbone.config)
    weights = weights if weights is not None else backbone.tensors()
    word = F.gather_rows(weights["emb.word"], seq.token_ids)
    position = F.gather_rows(weights["emb.pos"], range(len(seq)))
    segment = F.gather_rows(weights["emb.seg"], seq.segment_ids)
    return F.add(F.add(word, position), segment)


def transformer_layer_forward(h_prev: Tensor, layer: Mapping[str, Tensor], num_heads: int) -> Tensor:
    """Post-norm encoder layer: self-attention, residual, norm, gelu FFN, residual, norm."""

    d_model = layer["attn.wq"].shape[0]
    if len(h_prev.shape) != 2 or h_prev.shape[1] != d_model:
        raise ShapeError("transformer_layer", h_prev.shape, (None, d_model))
    d_head = d_model // num_heads

    q = F.split_heads(F.affine(h_prev, layer["attn.wq"], layer["attn.bq"]), num_heads)
    k = F.split_heads(F.affine(h_prev, layer["attn.wk"], layer["attn.bk"]), num_heads)
    v = F.split_heads(F.affine(h_prev, layer["attn.wv"], layer["attn.bv"]), num_heads)
    scores = F.scale(F.matmul(q, F.transpose(k)), 1.0 / math.sqrt(d_head))
    context = F.merge_heads(F.matmul(F.softmax(scores), v))
    attended = F.affine(context, layer["attn.wo"], layer["attn.bo"])
    x = F.add(F.mul(F.layer_norm(F.add(h_prev, attended)), layer["ln1.gain"]), layer["ln1.bias"])

    hidden = F.gelu(F.affine(x, layer["ffn.w1"], layer["ffn.b1"]))
    ffn = F.affine(hidden, layer["ffn.w2"], layer["ffn.b2"])
    return F.add(F.mul(F.layer_norm(F.add(x, ffn)), layer["ln2.gain"]), layer["ln2.bias"])


def run_layer(
    h_prev: Tensor,
    backbone: Backbone,
    index: int,
    weights: Optional[Weights] = None,
    counter: Optional[EvaluationCounter] = None,
) -> Tensor:
    weights = weights if weights is not None else backbone.tensors()
    if counter is not None:
        counter.layers += 1
    return transformer_layer_forward(h_prev, layer_weights(weights, index), backbone.config.num_heads)


def classify_with(h_last: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """logits = weight . h_last[0] + bias; rows other than CLS are never read."""

    if len(h_last.shape) != 2 or h_last.shape[1] != weight.shape[1]:
        raise ShapeError("classify", h_last.shape, weight.shape)
    cls_row = F.slice_row(h_last, 0)
    logits = F.add(F.matmul(cls_row, F.transpose(weight)), bias)
    return F.reshape(logits, (weight.shape[0],))


def classify(h_last: Tensor, backbone: Backbone, weights: Optional[Weights] = None) -> Tensor:
    weights = weights if weights is not None else backbone.tensors()
    return classify_with(h_last, weights["classifier.w"], weights["classifier.b"])


def full_forward(
    seq: TokenSequence,
    backbone: Backbone,
    weights: Optional[Weights] = None,
    *,
    depth: Optional[int] = None,
    counter: Optional[EvaluationCounter] = None,
) -> Tensor:
    """classify(Trans^L(...Trans^1(embed(seq)))); ``depth`` keeps only the first layers."""

    weights = weights if weights is not None else backbone.tensors()
    num_layers = backbone.config.num_layers if depth is None else depth
    if not 0 <= num_layers <= backbone.config.num_layers:
        raise ValueError(f"depth {depth} outside [0, {backbone.config.num_layers}]")
    h = embed(seq, backbone, weights)
    for index in range(num_layers):
        h = run_layer(h, backbone, index, weights, counter)
    return classify(h, backbone, weights)


def hidden_states(seq: TokenSequence, backbone: Backbone, weights: Optional[Weights] = None) -> Sequence[Tensor]:
    """[h0, h1, ..., hL] of the ungated chain."""

    weights = weights if weights is not None else backbone.tensors()
    states = [embed(seq, backbone, weights)]
    for index in range(backbone.config.num_layers):
        states.append(run_layer(states[-1], backbone, index, weights))
    return states


__all__ = [
    "Backbone",
    "EvaluationCounter",
    "ParameterSet",
    "TokenSequence",
    "backbone_param_shapes",
    "classify",
    "classify_with",
    "embed",
    "full_forward",
    "hidden_states",
    "layer_weights",
    "run_layer",
    "transformer_layer_forward",
]
