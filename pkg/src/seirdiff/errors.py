"""Exception types shared across the package."""


class SeirDiffError(Exception):
    """Base class for all errors raised by seirdiff."""


class ConfigurationError(SeirDiffError, ValueError):
    """Invalid scenario, geometry or parameter data."""


class DomainError(SeirDiffError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UsageError(SeirDiffError, RuntimeError):
    """Operation called with inconsistent inputs (e.g. wrong trajectory mode)."""


class SolverError(SeirDiffError, RuntimeError):
    """A linear solve did not reach the requested tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class OptimizationError(SeirDiffError, RuntimeError):
    """The optimizer could not make progress."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
