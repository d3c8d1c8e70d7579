"""Exception hierarchy shared by the library and the command line."""


class MotionPriorError(Exception):
    """Base class for all errors raised by motionprior."""


class ConfigError(MotionPriorError):
    """Invalid combination of options, or a required input is missing."""


class DataError(MotionPriorError, ValueError):
    """Input data violates a documented invariant."""


class FormatError(DataError):
    """Malformed file content.

    ``path`` and ``line`` locate the problem when known (``line`` is
    1-based for text formats and ``None`` for binary ones).
    """

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        loc = ""
        if self.path is not None:
            loc = self.path
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)


class CoverageError(DataError):
    """The gyroscope log does not cover a requested interval."""


class NumericalError(MotionPriorError, ArithmeticError):
    """A linear-algebra step failed even after regularisation."""
