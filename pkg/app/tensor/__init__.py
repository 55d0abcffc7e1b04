"""Minimal float64 tensor compute with reverse-mode differentiation."""

from app.tensor.core import Tape, TapeNode, Tensor, apply_primitive, backward, named_gradients
from app.tensor.gradcheck import finite_diff_check

__all__ = [
    "Tape",
    "TapeNode",
    "Tensor",
    "apply_primitive",
    "backward",
    "named_gradients",
    "finite_diff_check",
]
