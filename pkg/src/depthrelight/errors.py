"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: input/format problems exit 2,
shape/domain/parameter problems exit 3, scorer transport problems exit 4.
"""


class ShapeError(ValueError):
    """Grid dimensions disagree or are too small for the operation."""


class NumericError(ArithmeticError):
    """An operation produced a non-finite value."""


class DomainError(ValueError):
    """An input value lies outside the mathematically valid domain."""


class ParameterError(ValueError):
    """A configuration or call parameter is invalid."""


class FormatError(ValueError):
    """A file does not conform to its expected on-disk format."""


class ProtocolError(RuntimeError):
    """A scorer wire-protocol frame is malformed or incompatible."""


class GuidanceError(RuntimeError):
    """The guidance scorer failed or could not be reached."""
