"""Exception types shared across the package.

Every error raised by public API functions derives from :class:`HiclError`
and also from the closest builtin category (``ValueError``, ``RuntimeError``,
...) so callers can catch either.
"""


class HiclError(Exception):
    """Base class for all package errors."""


class DimensionError(HiclError, ValueError):
    """Array shape or length does not match the operation's contract."""


class ConfigError(HiclError, ValueError):
    """Invalid or inconsistent configuration value."""


class DataError(HiclError, ValueError):
    """Dataset content violates a precondition (labels, class sets, ...)."""


class ScenarioError(HiclError, ValueError):
    """Task-stream label structure is inconsistent with the scenario."""


class NumericError(HiclError, ArithmeticError):
    """Non-finite value encountered where finiteness is required."""


class FormatError(HiclError, ValueError):
    """Malformed binary or JSON file. Carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(HiclError, RuntimeError):
    """Operation requires model state that is missing or not yet trained."""


class NotFittedError(StateError):
    """Estimator used before calling ``fit``."""


class MetricUndefinedError(HiclError, ValueError):
    """Requested metric is undefined for the given matrix shape."""
