"""Exception types shared across the package."""


class KinlmcError(Exception):
    """Base class for all package errors."""


class ConfigError(KinlmcError, ValueError):
    """Invalid configuration, arguments or input files."""


class InvalidSpectrumError(ConfigError):
    pass


class ArgumentOrderError(ConfigError):
    pass


class RegimeError(ConfigError):
    """Parameters outside the regime a formula is stated for."""


class RangeError(ConfigError):
    """Target accuracy outside the range a budget formula covers."""


class ScheduleDegenerateError(ConfigError):
    pass


class NumericalError(KinlmcError, ArithmeticError):
    """A numerical routine failed (non-finite values, factorization failure)."""


class NumericalDegeneracyError(NumericalError):
    pass


class DivergenceError(NumericalError):
    """A chain produced non-finite states."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class CertificationError(KinlmcError, AssertionError):
    """A numerically certified inequality was violated."""


class InsufficientDataError(ConfigError):
    pass


class StepSizeWarning(UserWarning):
    """Step size outside the regime h <~ 1/gamma."""


class PrecisionWarning(UserWarning):
    """A Monte Carlo estimate has a large relative standard error."""


class TruncationWarning(UserWarning):
    """An integral tail estimate is not negligible."""
