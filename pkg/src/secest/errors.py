"""Exception hierarchy.

Structural problems (bad shapes, malformed files) raise :class:`DimensionError`;
everything else derived from :class:`SecestError` is a domain failure.
"""


class SecestError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SecestError, ValueError):
    """Inconsistent matrix dimensions or malformed input data."""


class PreconditionError(SecestError):
    """A mathematical hypothesis required by an operation does not hold."""


class UncontrollableError(PreconditionError):
    pass


class InadmissiblePoleError(PreconditionError):
    def __init__(self, message, pole=None, sensor=None):
        super().__init__(message)
        self.pole = pole
        self.sensor = sensor


class CostLimitError(SecestError):
    """Raised when a combinatorial search would exceed the configured budget."""
