"""Exception types shared across the package.

All data- and fit-level failures derive from :class:`ShiftScanError`; the
CLI maps them to exit status 2 (usage errors exit 1).
"""


class ShiftScanError(Exception):
    """Base class for data, schema, and fit errors."""


class SchemaError(ShiftScanError):
    """A table or file does not conform to its declared schema."""


class ParseError(ShiftScanError):
    """A value could not be parsed as its declared kind."""


class EmptyTableError(ShiftScanError):
    """An input that must contain data rows is empty."""


class FitError(ShiftScanError):
    """A model could not be fitted on the given data."""
