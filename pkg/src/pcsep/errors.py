"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (see ``pcsep.cli``).
"""


class PcsepError(Exception):
    """Base class for all package errors."""


class ConfigError(PcsepError):
    """Invalid configuration value or file."""


class DataError(PcsepError):
    """Missing, malformed or insufficient input data."""


class EmptyInputError(DataError):
    """An operation received an empty frame, cloud or tensor."""


class ParseError(DataError):
    """A media file could not be parsed.

    Args:
        message: what went wrong.
        offset: byte offset into the file where parsing failed.
        path: optional file path for the message.
    """

    def __init__(self, message, offset, path=None):
        self.offset = int(offset)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {self.offset})")


class DimensionError(PcsepError, ValueError):
    """Tensor shapes do not agree."""


class ContractError(PcsepError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class NumericalError(PcsepError, FloatingPointError):
    """NaN or Inf appeared in values or gradients."""
