"""Exception hierarchy.

Every error raised on purpose by the package derives from ``SpoofGuardError``
and carries a short ``category`` string that the CLI turns into an exit code.
"""


class SpoofGuardError(Exception):
    category = "error"
    exit_code = 1


class ConfigurationError(SpoofGuardError, ValueError):
    """Inconsistent dimensions, bad parameter values or unknown config keys."""

    category = "config"
    exit_code = 2


class DomainError(SpoofGuardError, ValueError):
    """An argument outside the mathematical domain of an operation."""

    category = "domain"
    exit_code = 2


class SingularityError(SpoofGuardError, ArithmeticError):
    """A distance fell under the guard radius of the 1/r^2 models."""

    category = "numerical"
    exit_code = 3


class NumericalError(SpoofGuardError, ArithmeticError):
    """Ill-conditioned or non-PSD matrices where a factorization is needed."""

    category = "numerical"
    exit_code = 3


class ExportError(SpoofGuardError, OSError):
    category = "io"
    exit_code = 4
