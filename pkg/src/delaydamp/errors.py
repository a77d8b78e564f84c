"""Exception types shared across the package."""


class DelayDampError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DelayDampError, ValueError):
    """Invalid parameters, shapes or configuration values."""


class OutOfRangeError(DelayDampError, ValueError):
    """A time lies outside the materialized horizon."""


class BoundMismatchError(DelayDampError, ValueError):
    """Declared feedback bounds disagree with the sampled profile."""


class HistoryUnderflowError(DelayDampError, ValueError):
    """A delayed velocity was requested outside the buffered span."""


class ConditionViolatedError(DelayDampError, ValueError):
    """A structural hypothesis needed by the computation does not hold."""


class UnobservableError(DelayDampError, ValueError):
    """An observability Gramian is singular; carries the null direction."""

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class ResolutionError(DelayDampError, ValueError):
    """A trace is too sparse for the requested check."""


class InsufficientDataError(DelayDampError, ValueError):
    """Not enough data points for a fit."""


class CFLError(ConfigurationError):
    """Time step violates dt <= h."""


class SimulationRefused(DelayDampError):
    """A scenario failed validation; ``report`` lists the violations."""

    def __init__(self, report):
        super().__init__("scenario failed validation: " + "; ".join(v.name for v in report.violations))
        self.report = report


class UndecidableError(DelayDampError):
    """A series or supremum cannot be decided for the declared tail family."""
