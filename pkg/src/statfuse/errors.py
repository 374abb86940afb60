"""Exception hierarchy.

Configuration and data errors map to CLI exit code 1, numerical failures
(non-convergence, infeasibility) to exit code 2.
"""


class StatfuseError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigurationError(StatfuseError, ValueError):
    """Bad column mapping, incompatible shapes, unsupported option."""


class DataError(StatfuseError, ValueError):
    """Input values violate a frame invariant."""


class DomainError(StatfuseError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(StatfuseError, ArithmeticError):
    exit_code = 2


class CalibrationError(NumericalError):
    """Calibration did not reach the requested residual."""


class InfeasibleError(NumericalError):
    """Transport marginals are inconsistent."""


class InternalError(NumericalError):
    """An invariant that should hold by construction was violated."""
