"""Exception hierarchy."""


class PibicError(Exception):
    """Base class for all package errors."""


class DomainError(PibicError, ValueError):
    """An input lies outside the domain where a function is defined."""


class DesignError(PibicError, ValueError):
    """A design or basis matrix is rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConvergenceError(PibicError, RuntimeError):
    """An iterative fit did not converge."""

    def __init__(self, message, deviance=None):
        super().__init__(message)
        self.deviance = deviance


class NestingError(PibicError, ValueError):
    """A likelihood ratio is negative beyond tolerance: models are not nested."""


class UsageError(PibicError, ValueError):
    """Arguments are inconsistent with the requested operation."""


class FitError(PibicError, RuntimeError):
    """A model fit failed; ``index`` identifies the model or replicate."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class BootstrapError(PibicError, RuntimeError):
    """Too many bootstrap replicates failed."""


class ConfigError(PibicError, ValueError):
    """An experiment configuration is invalid."""


class SaturationWarning(RuntimeWarning):
    """An exponential aggregate exceeded the overflow cap."""


class NumericError(PibicError, ArithmeticError):
    """A numerical routine (quadrature, factorization) failed; ``achieved`` holds its error."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved
