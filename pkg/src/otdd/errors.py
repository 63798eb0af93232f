"""Exception types raised by the library.

The CLI maps :class:`DataError` to exit status 3 and
:class:`ConvergenceError` to exit status 4 (under ``--strict``).
"""


class OtddError(Exception):
    """Base class for all library errors."""


class DataError(OtddError, ValueError):
    """Invalid, malformed or inconsistent input data."""


class DimensionMismatchError(DataError):
    """Two inputs that must share a feature dimension do not."""


class SolverError(OtddError, RuntimeError):
    """A numerical routine could not produce a valid result."""


class SizeCapError(SolverError):
    """An exact transport problem exceeds the configured size cap."""


class ConvergenceError(SolverError):
    """An iterative routine stopped before meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
