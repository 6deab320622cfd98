"""Exception and warning types raised across fluxsim."""


class FluxsimError(Exception):
    """Base class for all fluxsim errors."""


class ConfigError(FluxsimError, ValueError):
    pass


class DomainError(FluxsimError, ValueError):
    """Input outside the region where a model is defined."""


class ConvergenceError(FluxsimError, RuntimeError):
    """Basis truncation did not converge within the allowed dimension."""


class NoMinimumError(FluxsimError, RuntimeError):
    pass


class NegativeRateError(FluxsimError, ValueError):
    """A noise quadratic form evaluated to a negative rate."""


class FitError(FluxsimError, RuntimeError):
    pass


class SingularMatrixError(FluxsimError, ValueError):
    pass


class DegenerateSignalError(FluxsimError, ValueError):
    pass


class InstabilityError(FluxsimError, ValueError):
    pass


class GridError(FluxsimError, ValueError):
    pass


class IdentifiabilityWarning(UserWarning):
    """Fit data cover only one side of the flux/dielectric crossover."""


class RankWarning(UserWarning):
    """Two fitted exponential components are nearly degenerate."""
