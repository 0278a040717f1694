"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit status 2 and
:class:`NumericError` subclasses to exit status 3.
"""


class ChannelLabError(Exception):
    """Base class."""


class ConfigError(ChannelLabError, ValueError):
    """Invalid parameters, ranges or configuration."""


class NumericError(ChannelLabError, RuntimeError):
    """A numerical procedure failed or a model hypothesis was violated."""


class IntegrationError(NumericError):
    """Non-finite values appeared during integration."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class NotPeriodicError(NumericError):
    pass


class ChartError(NumericError):
    pass


class DegenerateFamilyError(NumericError):
    pass


class HypothesisViolation(NumericError):
    pass


class ConditioningError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level
