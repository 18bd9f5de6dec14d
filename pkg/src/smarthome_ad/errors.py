"""Exception hierarchy shared by every stage of the pipeline."""


class SmartHomeADError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(SmartHomeADError, ValueError):
    """An invalid configuration value or unsupported option."""

    exit_code = 2


class DataError(SmartHomeADError, ValueError):
    """Input data that cannot be used (missing, malformed, too small)."""

    exit_code = 3


class ParseError(DataError):
    """A CSV could not be parsed; ``column`` names the offending column."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class EmptySeriesError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class ShapeError(SmartHomeADError, ValueError):
    """Tensor shapes that do not fit together."""

    exit_code = 3

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class ContractError(SmartHomeADError, RuntimeError):
    """An API was called in a state that violates its preconditions."""


class NumericError(SmartHomeADError, ArithmeticError):
    """Training diverged (NaN / inf loss)."""

    exit_code = 4

    def __init__(self, message, **diagnostics):
        if diagnostics:
            detail = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
            message = f"{message} ({detail})"
        super().__init__(message)
        self.diagnostics = diagnostics
