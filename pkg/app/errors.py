"""Exception types shared across the package."""
from __future__ import annotations

from typing import Sequence


class ShapeError(ValueError):
    """Raised when a primitive or layer receives incompatible shapes."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str | None = None) -> None:
        rendered = " and ".join(str(tuple(shape)) for shape in shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.op = op
        self.shapes = tuple(tuple(shape) for shape in shapes)


class DatasetError(ValueError):
    """Raised for malformed dataset files or labels."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UsageError(ValueError):
    """Raised for a malformed command line."""


class InvariantViolation(RuntimeError):
    """Raised when an internal training or numerical contract is broken."""


class NonFiniteGradientError(InvariantViolation):
    """Raised when a gradient contains NaN or Inf."""

    def __init__(self, path: str) -> None:
        super().__init__(f"non-finite gradient for parameter {path}")
        self.path = path


__all__ = ["ShapeError", "DatasetError", "UsageError", "InvariantViolation", "NonFiniteGradientError"]
