"""Exception hierarchy shared across the package.

Every error raised on a user-facing path derives from SemCodecError so the
command line layer can map failures to exit codes without string matching.
"""


class SemCodecError(Exception):
    """Base class for all package errors."""


class ParameterError(SemCodecError):
    """An argument violates a documented precondition."""


class ShapeError(ParameterError):
    """An array argument has the wrong rank or dimensions."""


class DataError(SemCodecError):
    """Input data violates a documented range or value constraint."""


class NumericError(SemCodecError):
    """A computation produced NaN or Inf from finite, in-range inputs."""


class FormatError(SemCodecError):
    """A file is malformed: bad magic, bad header field, or truncated payload."""


class UnsupportedFormatError(FormatError):
    """A file parses but uses an encoding this package does not handle."""


class StateError(SemCodecError):
    """An operation was called in the wrong order or on incompatible state."""


class ModeMismatchError(StateError):
    """A checkpoint or artifact was produced under a different codec mode."""


class DatasetError(SemCodecError):
    """The training or evaluation corpus is missing or inconsistent."""


class ConfigError(SemCodecError):
    """A configuration file failed to parse or validate.

    Carries the 1-based line and column of the offending token when known.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)
