"""
Exception hierarchy shared by every package.

Each error carries a human readable ``detail`` and the process ``exit_code``
the CLI maps it to (2 for usage/validation problems, 3 for numerical failure).
"""
from typing import Any, Optional


class InvertKitError(Exception):
    """Base error with a detail message and a CLI exit code."""

    exit_code: int = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(InvertKitError):
    """Caller violated an operation's contract."""


class InputValidationError(InvertKitError):
    """Input data does not match what the consumer expects."""


class ConfigurationError(InvertKitError):
    """A configuration or architecture request cannot be satisfied."""


class DimensionError(InvertKitError):
    """Shape mismatch on a named axis."""

    def __init__(self, axis: str, detail: str):
        super().__init__(f"dimension mismatch on axis '{axis}': {detail}")
        self.axis = axis


class StateError(InvertKitError):
    """An operation was invoked in the wrong lifecycle state."""


class KeypointParseError(InvertKitError):
    """Malformed line in a keypoint file."""

    def __init__(self, line_number: int, detail: str):
        super().__init__(f"line {line_number}: {detail}")
        self.line_number = line_number


class DatasetError(InvertKitError):
    """Not enough usable images, or an unusable dataset layout."""


class MetricError(InvertKitError):
    """The normalized error cannot be computed on this test set."""


class PerturbationError(InvertKitError):
    """A feature perturbation is undefined for this vector."""


class CheckpointLoadError(InvertKitError):
    """Bad magic, unsupported version or truncated binary file."""


class NumericalError(InvertKitError):
    """Non-finite values appeared in a gradient or activation."""

    exit_code = 3

    def __init__(self, layer: str, detail: str):
        super().__init__(f"non-finite values in '{layer}': {detail}")
        self.layer = layer


class DivergenceError(InvertKitError):
    """Training loss exploded; carries the best checkpoint seen so far."""

    exit_code = 3

    def __init__(self, detail: str, checkpoint: Optional[Any] = None):
        super().__init__(detail)
        self.checkpoint = checkpoint
