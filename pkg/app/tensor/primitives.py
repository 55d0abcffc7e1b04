"""Primitive operations recorded on the differentiation tape.

Each primitive owns a forward kernel on float64 numpy arrays and a
vector-Jacobian product. Forward kernels return ``(output, ctx)`` where ``ctx``
holds whatever the backward pass needs; ``vjp`` returns one gradient per input
(``None`` for inputs that receive no gradient).
"""
from __future__ import annotations

import math
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf, expit, log_softmax

from app.errors import ShapeError

LAYER_NORM_EPSILON = 1e-5

Grads = Tuple[Optional[np.ndarray], ...]


def unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""

    shape = tuple(shape)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _swap_last(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(array, -1, -2))


class Primitive:
    """Base class; subclasses set ``kind`` and ``arity``."""

    kind: str = ""
    arity: int = 1

    def check(self, arrays: Sequence[np.ndarray], attrs: Dict[str, Any]) -> None:
        if len(arrays) != self.arity:
            raise ValueError(f"{self.kind} expects {self.arity} inputs, got {len(arrays)}")

    def forward(self, *arrays: np.ndarray, **attrs: Any) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def vjp(self, grad: np.ndarray, ctx: Any, **attrs: Any) -> Grads:
        raise NotImplementedError


class _Elementwise(Primitive):
    arity = 2

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        try:
            np.broadcast_shapes(arrays[0].shape, arrays[1].shape)
        except ValueError:
            raise ShapeError(self.kind, arrays[0].shape, arrays[1].shape) from None


class Add(_Elementwise):
    kind = "add"

    def forward(self, a, b):
        return a + b, (a.shape, b.shape)

    def vjp(self, grad, ctx):
        a_shape, b_shape = ctx
        return unbroadcast(grad, a_shape), unbroadcast(grad, b_shape)


class Sub(_Elementwise):
    kind = "sub"

    def forward(self, a, b):
        return a - b, (a.shape, b.shape)

    def vjp(self, grad, ctx):
        a_shape, b_shape = ctx
        return unbroadcast(grad, a_shape), unbroadcast(-grad, b_shape)


class Mul(_Elementwise):
    kind = "mul"

    def forward(self, a, b):
        return a * b, (a, b)

    def vjp(self, grad, ctx):
        a, b = ctx
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Scale(Primitive):
    kind = "scale"

    def forward(self, x, *, factor: float):
        return x * factor, None

    def vjp(self, grad, ctx, *, factor: float):
        return (grad * factor,)


class MatMul(Primitive):
    kind = "matmul"
    arity = 2

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        a, b = arrays
        if a.ndim not in (2, 3) or b.ndim not in (2, 3):
            raise ShapeError(self.kind, a.shape, b.shape, detail="operands must be 2-D or 3-D")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(self.kind, a.shape, b.shape, detail="inner dimensions differ")
        if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
            raise ShapeError(self.kind, a.shape, b.shape, detail="batch dimensions differ")

    def forward(self, a, b):
        return np.matmul(a, b), (a, b)

    def vjp(self, grad, ctx):
        a, b = ctx
        grad_a = np.matmul(grad, _swap_last(b))
        grad_b = np.matmul(_swap_last(a), grad)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


class Sigmoid(Primitive):
    kind = "sigmoid"

    def forward(self, x):
        out = expit(x)
        return out, out

    def vjp(self, grad, out):
        return (grad * out * (1.0 - out),)


class LogSigmoid(Primitive):
    kind = "log-sigmoid"

    def forward(self, x):
        return -np.logaddexp(0.0, -x), x

    def vjp(self, grad, x):
        return (grad * expit(-x),)


class Exp(Primitive):
    kind = "exp"

    def forward(self, x):
        out = np.exp(x)
        return out, out

    def vjp(self, grad, out):
        return (grad * out,)


class Softmax(Primitive):
    kind = "softmax-last-axis"

    def forward(self, x):
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        out = shifted / shifted.sum(axis=-1, keepdims=True)
        return out, out

    def vjp(self, grad, out):
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)),)


class LogSoftmax(Primitive):
    kind = "log-softmax-last-axis"

    def forward(self, x):
        out = log_softmax(x, axis=-1)
        return out, out

    def vjp(self, grad, out):
        return (grad - np.exp(out) * grad.sum(axis=-1, keepdims=True),)


class LayerNorm(Primitive):
    kind = "layer-norm"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        if arrays[0].ndim == 0 or arrays[0].shape[-1] < 2:
            raise ShapeError(self.kind, arrays[0].shape, detail="last axis must have length >= 2")

    def forward(self, x, *, eps: float = LAYER_NORM_EPSILON):
        centered = x - x.mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
        normed = centered * inv_std
        return normed, (normed, inv_std)

    def vjp(self, grad, ctx, *, eps: float = LAYER_NORM_EPSILON):
        normed, inv_std = ctx
        mean_grad = grad.mean(axis=-1, keepdims=True)
        mean_proj = (grad * normed).mean(axis=-1, keepdims=True)
        return (inv_std * (grad - mean_grad - normed * mean_proj),)


class Gelu(Primitive):
    """Exact gelu, x * Phi(x)."""

    kind = "gelu"

    def forward(self, x):
        cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        return x * cdf, (x, cdf)

    def vjp(self, grad, ctx):
        x, cdf = ctx
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return (grad * (cdf + x * pdf),)


class Transpose(Primitive):
    """Swap the last two axes."""

    kind = "transpose"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        if arrays[0].ndim < 2:
            raise ShapeError(self.kind, arrays[0].shape, detail="needs at least 2 axes")

    def forward(self, x):
        return _swap_last(x), None

    def vjp(self, grad, ctx):
        return (_swap_last(grad),)


class SliceRow(Primitive):
    """Row ``index`` of a matrix, kept as a 1 x d matrix."""

    kind = "slice-row"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        x = arrays[0]
        if x.ndim != 2:
            raise ShapeError(self.kind, x.shape, detail="expects a matrix")
        if not 0 <= attrs["index"] < x.shape[0]:
            raise ShapeError(self.kind, x.shape, detail=f"row {attrs['index']} out of range")

    def forward(self, x, *, index: int):
        return x[index : index + 1].copy(), x.shape

    def vjp(self, grad, shape, *, index: int):
        full = np.zeros(shape)
        full[index : index + 1] = grad
        return (full,)


class Mean(Primitive):
    kind = "mean"

    def forward(self, x):
        return np.asarray(x.mean()), x.shape

    def vjp(self, grad, shape):
        size = int(np.prod(shape)) if shape else 1
        return (np.full(shape, float(grad) / size),)


class Sum(Primitive):
    kind = "sum"

    def forward(self, x):
        return np.asarray(x.sum()), x.shape

    def vjp(self, grad, shape):
        return (np.full(shape, float(grad)),)


class Take(Primitive):
    """Single element at flat ``index``, as a scalar."""

    kind = "take"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        if not 0 <= attrs["index"] < arrays[0].size:
            raise ShapeError(self.kind, arrays[0].shape, detail=f"index {attrs['index']} out of range")

    def forward(self, x, *, index: int):
        return np.asarray(x.reshape(-1)[index]), x.shape

    def vjp(self, grad, shape, *, index: int):
        full = np.zeros(int(np.prod(shape)))
        full[index] = float(grad)
        return (full.reshape(shape),)


class Gather(Primitive):
    """Rows of a table selected by integer ids (embedding lookup)."""

    kind = "gather-rows"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        table = arrays[0]
        if table.ndim != 2:
            raise ShapeError(self.kind, table.shape, detail="table must be a matrix")
        ids = np.asarray(attrs["ids"])
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError(self.kind, table.shape, detail="row id out of range")

    def forward(self, table, *, ids):
        return table[np.asarray(ids, dtype=np.int64)], table.shape

    def vjp(self, grad, shape, *, ids):
        full = np.zeros(shape)
        np.add.at(full, np.asarray(ids, dtype=np.int64), grad)
        return (full,)


class Reshape(Primitive):
    kind = "reshape"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        if int(np.prod(attrs["shape"])) != arrays[0].size:
            raise ShapeError(self.kind, arrays[0].shape, attrs["shape"])

    def forward(self, x, *, shape):
        return x.reshape(shape).copy(), x.shape

    def vjp(self, grad, original, *, shape):
        return (grad.reshape(original),)


class SplitHeads(Primitive):
    """(n, d) -> (heads, n, d / heads)."""

    kind = "split-heads"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        x = arrays[0]
        if x.ndim != 2 or x.shape[1] % attrs["heads"]:
            raise ShapeError(self.kind, x.shape, detail=f"cannot split into {attrs['heads']} heads")

    def forward(self, x, *, heads: int):
        n, d = x.shape
        return np.ascontiguousarray(x.reshape(n, heads, d // heads).transpose(1, 0, 2)), x.shape

    def vjp(self, grad, shape, *, heads: int):
        return (np.ascontiguousarray(grad.transpose(1, 0, 2)).reshape(shape),)


class MergeHeads(Primitive):
    """(heads, n, d_head) -> (n, heads * d_head)."""

    kind = "merge-heads"

    def check(self, arrays, attrs):
        super().check(arrays, attrs)
        if arrays[0].ndim != 3:
            raise ShapeError(self.kind, arrays[0].shape, detail="expects (heads, n, d_head)")

    def forward(self, x):
        heads, n, d_head = x.shape
        return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(n, heads * d_head), x.shape

    def vjp(self, grad, shape):
        heads, n, d_head = shape
        return (np.ascontiguousarray(grad.reshape(n, heads, d_head).transpose(1, 0, 2)),)


PRIMITIVES: Dict[str, Primitive] = {
    primitive.kind: primitive
    for primitive in (
        Add(),
        Sub(),
        Mul(),
        Scale(),
        MatMul(),
        Sigmoid(),
        LogSigmoid(),
        Exp(),
        Softmax(),
        LogSoftmax(),
        LayerNorm(),
        Gelu(),
        Transpose(),
        SliceRow(),
        Mean(),
        Sum(),
        Take(),
        Gather(),
        Reshape(),
        SplitHeads(),
        MergeHeads(),
    )
}

__all__ = ["PRIMITIVES", "Primitive", "LAYER_NORM_EPSILON", "unbroadcast"]
