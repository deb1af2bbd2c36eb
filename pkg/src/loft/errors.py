"""Exception taxonomy shared across the engine.

CLI exit-code mapping: usage and contract problems exit 2, numerical
failures exit 3, file-format and I/O problems exit 4.
"""

from __future__ import annotations


class LoftError(Exception):
    """Base class for all engine errors."""


class ParameterError(LoftError, ValueError):
    """Invalid constructor or operation parameters."""


class ContractError(LoftError, ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(ContractError):
    """Input is degenerate for the requested operation (e.g. a zero-norm vector)."""


class DegeneratePriorError(ContractError):
    """Class prior has a zero component where its logarithm is required."""


class CapacityError(LoftError, ValueError):
    """A split profile asks for more samples than a class can supply."""

    def __init__(self, class_index: int, needed: int, available: int):
        self.class_index = class_index
        self.needed = needed
        self.available = available
        super().__init__(
            f"class {class_index} has {available} samples, split needs {needed}"
        )


class FormatError(LoftError, ValueError):
    """Malformed bundle or checkpoint file. Carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CheckpointVersionError(FormatError):
    """Checkpoint was written by an incompatible format version."""


class TrainingDivergenceError(LoftError, ArithmeticError):
    """Training produced a non-finite quantity."""

    def __init__(self, step: int, batch_ids=None, message: str | None = None):
        self.step = step
        self.batch_ids = None if batch_ids is None else list(batch_ids)
        detail = message or "non-finite value during training"
        suffix = f", batch ids {self.batch_ids}" if self.batch_ids else ""
        super().__init__(f"{detail} at step {step}{suffix}")
