"""Exception hierarchy shared by all modules."""


class NMQOCError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(NMQOCError, ValueError):
    """An argument violates a documented precondition."""


class FitFailed(NMQOCError):
    """The multi-exponential fit did not reach the residual threshold."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IntegrationDiverged(NMQOCError):
    """A memory function or propagator entry exceeded the blow-up threshold."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NoAdmissibleGuess(NMQOCError):
    """No constant closed-system pulse of the right parity fits the bounds."""


class ConfigError(NMQOCError, ValueError):
    """An experiment configuration field is missing or invalid."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
