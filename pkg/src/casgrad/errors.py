"""Exception hierarchy shared by all modules."""


class CasgError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CasgError):
    """Invalid configuration or arguments supplied by the caller."""


class NumericalError(CasgError):
    """A numerical stage could not produce a valid result."""


class SingularDifferenceMatrix(NumericalError):
    pass


class InvalidActiveSet(NumericalError):
    pass


class NegativeTrace(NumericalError):
    pass


class NotPowerOfTwo(NumericalError):
    pass


class NonFiniteInput(NumericalError):
    pass


class DegenerateGeometry(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class EmptyRecordSet(CasgError):
    pass


class EstimatorFailure(NumericalError):
    """Wraps an estimator exception raised during a Monte-Carlo trial."""

    def __init__(self, trial, cause):
        super().__init__(f"estimator failed in trial {trial}: {cause}")
        self.trial = trial
        self.cause = cause
