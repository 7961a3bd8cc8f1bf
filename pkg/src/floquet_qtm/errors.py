class FloquetQTMError(Exception):
    """Base class for all package errors."""


class InvalidArgument(FloquetQTMError, ValueError):
    pass


class ModelEvaluationError(FloquetQTMError):
    """A rate modulation returned a negative or non-finite value."""


class DegenerateNESS(FloquetQTMError):
    """The Floquet matrix kernel is not one-dimensional."""

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class IllConditionedSolve(FloquetQTMError):
    pass


class UndefinedMerit(FloquetQTMError):
    pass


class NonConvergence(FloquetQTMError):
    def __init__(self, message, metric=None):
        super().__init__(message)
        self.metric = metric


class OptimizationFailed(FloquetQTMError):
    pass


class ConfigError(FloquetQTMError):
    pass
