"""Immutable float64 tensors and the append-only differentiation tape."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from app.tensor.primitives import PRIMITIVES


class Tensor:
    """Dense row-major float64 array, optionally attached to a tape node.

    The underlying array is read-only; primitives always allocate new outputs.
    """

    __slots__ = ("data", "node", "tape")

    def __init__(self, data: Any, *, node: Optional[int] = None, tape: Optional["Tape"] = None) -> None:
        array = np.asarray(data, dtype=np.float64)
        if array.flags.writeable:
            array = array.view()
            array.flags.writeable = False
        self.data = array
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def attached(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"


@dataclass(frozen=True)
class TapeNode:
    """One recorded primitive application (or a leaf)."""

    id: int
    kind: str
    inputs: Tuple[Optional[int], ...]
    operands: Tuple[np.ndarray, ...]
    attrs: Dict[str, Any]
    ctx: Any
    value: np.ndarray
    name: Optional[str] = None


@dataclass
class Tape:
    """Append-only record of primitive applications.

    Node ids are list positions, so every input id is smaller than the id of its
    consumer.
    """

    nodes: List[TapeNode] = field(default_factory=list)

    def leaf(self, value: Any, *, name: Optional[str] = None) -> Tensor:
        """Register a differentiable leaf and return it attached to this tape."""

        data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        tensor = Tensor(data)
        node = TapeNode(
            id=len(self.nodes),
            kind="leaf",
            inputs=(),
            operands=(),
            attrs={},
            ctx=None,
            value=tensor.data,
            name=name,
        )
        self.nodes.append(node)
        return Tensor(tensor.data, node=node.id, tape=self)

    def bind(
        self, params: Mapping[str, np.ndarray], *, frozen: Iterable[str] = ()
    ) -> Dict[str, Tensor]:
        """Attach named parameters as leaves; frozen names become constants."""

        frozen_set = set(frozen)
        bound: Dict[str, Tensor] = {}
        for name, value in params.items():
            bound[name] = Tensor(value) if name in frozen_set else self.leaf(value, name=name)
        return bound

    def record(
        self,
        kind: str,
        inputs: Tuple[Tensor, ...],
        attrs: Dict[str, Any],
        ctx: Any,
        value: np.ndarray,
    ) -> int:
        node = TapeNode(
            id=len(self.nodes),
            kind=kind,
            inputs=tuple(t.node if t.tape is self else None for t in inputs),
            operands=tuple(t.data for t in inputs),
            attrs=attrs,
            ctx=ctx,
            value=value,
        )
        self.nodes.append(node)
        return node.id

    @property
    def leaves(self) -> List[TapeNode]:
        return [node for node in self.nodes if node.kind == "leaf"]

    def replay(self) -> bool:
        """Re-run every recorded primitive from the leaves; True when all values match bit-exactly."""

        values: Dict[int, np.ndarray] = {}
        for node in self.nodes:
            if node.kind == "leaf":
                values[node.id] = node.value
                continue
            operands = tuple(
                values[input_id] if input_id is not None else operand
                for input_id, operand in zip(node.inputs, node.operands)
            )
            out, _ = PRIMITIVES[node.kind].forward(*operands, **node.attrs)
            if out.shape != node.value.shape or not np.array_equal(out, node.value):
                return False
            values[node.id] = out
        return True


def apply_primitive(kind: str, *inputs: Tensor, **attrs: Any) -> Tensor:
    """Evaluate primitive ``kind`` and record it when any input is tape-attached."""

    primitive = PRIMITIVES.get(kind)
    if primitive is None:
        raise ValueError(f"Unknown primitive {kind}")
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if len(tapes) > 1:
        raise ValueError(f"{kind}: inputs are attached to different tapes")
    arrays = [t.data for t in inputs]
    primitive.check(arrays, attrs)
    out, ctx = primitive.forward(*arrays, **attrs)
    out = np.asarray(out, dtype=np.float64)
    if not tapes:
        return Tensor(out)
    tape = next(iter(tapes.values()))
    node = tape.record(kind, inputs, attrs, ctx, out)
    return Tensor(out, node=node, tape=tape)


def backward(tape: Tape, loss: Tensor) -> Dict[int, Tensor]:
    """Reverse-mode pass from a scalar ``loss``; returns leaf node id -> gradient.

    Leaves the loss does not depend on receive zero tensors.
    """

    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape or loss.node is None:
        raise ValueError("loss is not attached to the given tape")
    grads: Dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.node + 1]):
        if node.kind == "leaf":
            continue
        grad = grads.pop(node.id, None)
        if grad is None:
            continue
        input_grads = PRIMITIVES[node.kind].vjp(grad, node.ctx, **node.attrs)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_id is None or input_grad is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad
    return {
        leaf.id: Tensor(grads.get(leaf.id, np.zeros_like(leaf.value))) for leaf in tape.leaves
    }


def named_gradients(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradients keyed by the names given to leaves in :meth:`Tape.bind`."""

    by_id = backward(tape, loss)
    return {leaf.name: by_id[leaf.id].data for leaf in tape.leaves if leaf.name is not None}


__all__ = ["Tensor", "Tape", "TapeNode", "apply_primitive", "backward", "named_gradients"]
