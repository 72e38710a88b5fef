"""Exception types shared across the package."""

from __future__ import annotations


class RampMergeError(Exception):
    """Base class for all package errors."""


class ShapeError(RampMergeError, ValueError):
    """An array does not have the dimensions an operation requires."""


class ContractError(RampMergeError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class NumericError(RampMergeError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class ConfigError(RampMergeError, ValueError):
    """A configuration file or section failed validation."""


class CheckpointError(RampMergeError, OSError):
    """Base class for checkpoint I/O failures."""


class CheckpointNotFoundError(CheckpointError, FileNotFoundError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class DatasetParseError(RampMergeError, ValueError):
    """A dataset file could not be parsed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
