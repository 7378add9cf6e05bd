"""Exception types shared across the package."""


class SqlinkError(Exception):
    """Base class for all package errors."""


class CorpusFormatError(SqlinkError):
    """Malformed corpus file; message names the file and record index."""


class SchemaReferenceError(SqlinkError):
    """A record references a schema item or database that does not exist."""


class GrammarError(SqlinkError):
    """SQL text or an AST does not conform to the reduced grammar."""

    def __init__(self, message, span=None):
        super().__init__(message)
        self.span = span  # (start, end) character offsets, when known


class CapacityError(SqlinkError):
    """An input exceeds the contextual encoder's length limit."""


class NumericalError(SqlinkError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(SqlinkError):
    """Inconsistent or incomplete run configuration."""


class DecodeTruncatedError(SqlinkError):
    """Decoding hit the action cap before completing a tree."""
