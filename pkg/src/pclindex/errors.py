from __future__ import annotations


class PCLIndexError(Exception):
    """Base class for errors raised by this package."""


class InvalidModelError(PCLIndexError):
    """The project definition is malformed or evaluates to non-finite values."""


class InvalidParameterError(InvalidModelError):
    """A model parameter is outside its admissible range."""


class EvaluationError(PCLIndexError):
    """A function could not be evaluated at a required point."""


class ResourceLimitError(PCLIndexError):
    """The reachable state graph outgrew the configured node budget."""

    def __init__(self, count: int, budget: int):
        super().__init__(f"reachable closure has {count} nodes, budget is {budget}")
        self.count = count
        self.budget = budget


class NoConvergenceError(PCLIndexError):
    """An iteration failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class UndefinedMetricError(PCLIndexError):
    """A ratio metric was requested where its denominator is not positive."""


class UnsupportedStructureError(PCLIndexError):
    """The requested analysis is not defined for this kernel type."""


class ConfigError(PCLIndexError):
    """Configuration could not be parsed or validated."""
