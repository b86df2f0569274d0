"""Exceptions raised by nmtlab."""
from .const import (
    EXIT_COMPATIBILITY,
    EXIT_CONFIG,
    EXIT_CONTRACT,
    EXIT_DIVERGENCE,
    EXIT_FAILURE,
    EXIT_INPUT,
    EXIT_IO,
    EXIT_USAGE,
)


class NmtLabError(Exception):
    """Base error; carries the process exit code used by the CLI."""

    exit_code = EXIT_FAILURE


class UsageError(NmtLabError):
    """Bad command-line usage."""

    exit_code = EXIT_USAGE


class ConfigError(NmtLabError):
    """Invalid configuration value or variant combination."""

    exit_code = EXIT_CONFIG


class InputError(NmtLabError):
    """Invalid input data (empty corpus, unknown id, mismatched files)."""

    exit_code = EXIT_INPUT


class CompatibilityError(NmtLabError):
    """Checkpoint or vocabulary does not match what the caller expects."""

    exit_code = EXIT_COMPATIBILITY


class ContractError(NmtLabError):
    """A precondition of an operation was violated."""

    exit_code = EXIT_CONTRACT


class DimensionError(ContractError, ValueError):
    """Operand shapes do not agree."""


class CheckpointIOError(NmtLabError, OSError):
    """Reading or writing a file failed."""

    exit_code = EXIT_IO

    def __init__(self, path: str, reason: str) -> None:
        """Initialize the error with the failing path."""
        super().__init__(f"{path}: {reason}")
        self.path = path


class DivergenceError(NmtLabError):
    """Training loss became non-finite."""

    exit_code = EXIT_DIVERGENCE
