"""Error types for meshdiff.

The CLI maps ``ValueError`` (and therefore ``ValidationError``/``ParseError``) to exit
code 1 and ``ArithmeticError`` (``NumericalError``) to exit code 2.
"""

from typing import Optional


class MeshDiffError(Exception):
    """Base class for all meshdiff errors."""


class ValidationError(MeshDiffError, ValueError):
    """Invalid input or violated precondition."""


class ParseError(ValidationError):
    """Malformed mesh file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None and f"line {line}" not in message:
            message = f"{message} at line {line}"
        super().__init__(message)


class NumericalError(MeshDiffError, ArithmeticError):
    """Solver failure, diverged rollout, non-finite loss or failed invariant."""
