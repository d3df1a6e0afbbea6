"""Exception hierarchy shared across the package."""


class SvcselError(Exception):
    """Base class for all package errors."""


class InputError(SvcselError):
    """Invalid or inconsistent input data."""


class ParameterError(SvcselError):
    """Invalid configuration or tuning parameter."""


class BasisError(SvcselError):
    """A coefficient basis cannot be constructed from the given covariate."""


class NumericalError(SvcselError):
    """A linear-algebra step failed beyond recoverable jitter."""


class DiagnosticError(SvcselError):
    """A diagnostic statistic is undefined for the given input."""
