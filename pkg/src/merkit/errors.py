"""Exception types shared across the toolkit.

Every failure mode that callers are expected to branch on gets its own
class; anything else is allowed to surface as a plain ValueError from
the underlying numerics.
"""


class MerkitError(Exception):
    """Base class for all toolkit-specific errors."""


class DimensionError(MerkitError):
    """Shapes of the operands are incompatible."""


class DataError(MerkitError):
    """Input data is empty, non-finite, or otherwise unusable."""


class ParameterError(MerkitError):
    """A configuration value is outside its documented domain."""


class SingularMatrixError(MerkitError):
    """A linear system is singular or not positive definite."""


class CapacityError(MerkitError):
    """The request exceeds a documented size limit."""


class FixtureError(MerkitError):
    """A bundled fixture table fails its integrity checks."""


class UndefinedCorrelationError(MerkitError):
    """A correlation is requested on constant input."""


class ParseError(MerkitError):
    """A text input (CSV, config) cannot be parsed."""
