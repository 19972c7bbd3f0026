"""Exception hierarchy.

Every error raised by the package derives from :class:`CFBError`, and each
concrete class also derives from the closest builtin so callers that catch
``ValueError`` or ``KeyError`` keep working.
"""


class CFBError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CFBError, ValueError):
    """Invalid sizes, ratios, unknown config keys or impossible geometry."""


class ValidationError(CFBError, ValueError):
    """Input data violates a documented invariant."""


class UnknownClassError(CFBError, KeyError):
    """A class id that was never declared."""

    def __str__(self):
        return Exception.__str__(self)


class SizeError(CFBError, ValueError):
    """Not enough elements for the requested operation."""


class WarmupError(SizeError):
    """A class bank has not reached capacity yet."""

    def __init__(self, message, class_id=None):
        super().__init__(message)
        self.class_id = class_id


class RangeError(CFBError, ValueError):
    """Schedule position outside ``[0, T]``."""


class FormatError(CFBError, ValueError):
    """Malformed snapshot, ERF or JSONL file.

    ``line`` and ``column`` are 1-based when known.
    """

    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"col {column}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


class JoinError(CFBError, ValueError):
    """Decision and ground-truth record ids do not line up."""
