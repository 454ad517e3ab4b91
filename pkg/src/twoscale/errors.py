"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates an operation precondition."""


class StabilityViolation(ValueError):
    """The time step is too coarse for the fast scale (dt > eps/10)."""


class NonFiniteError(FloatingPointError):
    """A simulated path or an estimator produced NaN/inf values."""


class DegenerateFit(ValueError):
    """A regression had nothing to fit (e.g. identical coupled initial data)."""


class HypothesisGateError(RuntimeError):
    """A study refused to run because the model fails a validity check.

    The failing report is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ValueError):
    """Configuration problem, located by a dotted key path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message
