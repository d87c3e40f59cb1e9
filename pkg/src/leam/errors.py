class LeamError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(LeamError, ValueError):
    """Operand shapes do not agree."""


class DegenerateError(LeamError, ValueError):
    """A norm, sum or geometric configuration is too close to zero."""


class FormatError(LeamError, ValueError):
    """A file does not conform to its expected format."""
