"""Functional wrappers over the tape primitives."""
from __future__ import annotations

from typing import Sequence

from app.tensor.core import Tensor, apply_primitive
from app.tensor.primitives import LAYER_NORM_EPSILON


def constant(value) -> Tensor:
    return Tensor(value)


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("mul", a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return apply_primitive("scale", x, factor=float(factor))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", a, b)


def sigmoid(x: Tensor) -> Tensor:
    return apply_primitive("sigmoid", x)


def log_sigmoid(x: Tensor) -> Tensor:
    return apply_primitive("log-sigmoid", x)


def exp(x: Tensor) -> Tensor:
    return apply_primitive("exp", x)


def softmax(x: Tensor) -> Tensor:
    return apply_primitive("softmax-last-axis", x)


def log_softmax(x: Tensor) -> Tensor:
    return apply_primitive("log-softmax-last-axis", x)


def layer_norm(x: Tensor, eps: float = LAYER_NORM_EPSILON) -> Tensor:
    return apply_primitive("layer-norm", x, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return apply_primitive("gelu", x)


def transpose(x: Tensor) -> Tensor:
    return apply_primitive("transpose", x)


def slice_row(x: Tensor, index: int) -> Tensor:
    return apply_primitive("slice-row", x, index=int(index))


def mean(x: Tensor) -> Tensor:
    return apply_primitive("mean", x)


def total(x: Tensor) -> Tensor:
    return apply_primitive("sum", x)


def take(x: Tensor, index: int) -> Tensor:
    return apply_primitive("take", x, index=int(index))


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    return apply_primitive("gather-rows", table, ids=tuple(int(i) for i in ids))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return apply_primitive("reshape", x, shape=tuple(int(s) for s in shape))


def split_heads(x: Tensor, heads: int) -> Tensor:
    return apply_primitive("split-heads", x, heads=int(heads))


def merge_heads(x: Tensor) -> Tensor:
    return apply_primitive("merge-heads", x)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored (in, out)."""

    return add(matmul(x, weight), bias)
