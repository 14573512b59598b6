"""Exception hierarchy shared by all urv modules."""


class UrvError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UrvError):
    """Inconsistent dimensions, out-of-range arguments, or bad configuration."""


class ParseError(UrvError):
    """Malformed network or property file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(UrvError):
    """LP solver failure or non-finite values in a numeric kernel."""


class DegenerateSegment(UrvError):
    """Segment endpoints do not straddle the splitting hyperplane."""


class BudgetExceeded(UrvError):
    """The exact ReLU image grew past the configured polytope-count cap."""
