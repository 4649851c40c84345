"""Exception hierarchy shared across the package.

Exit codes carried by the exceptions are what the CLI reports:
2 for bad input data, 3 for numerical failures, 4 for bad configuration.
"""


class CsasError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputValidationError(CsasError):
    """Raised when input data violates a documented precondition."""

    exit_code = 2


class NumericalError(CsasError):
    """Raised when a numerical procedure cannot produce a usable result."""

    exit_code = 3


class ConfigError(CsasError):
    """Raised for invalid configuration values or files."""

    exit_code = 4
