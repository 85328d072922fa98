"""Shared exception types."""


class SamheadError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SamheadError):
    """Input data is malformed or inconsistent (maps to CLI exit code 3)."""


class ConfigError(SamheadError):
    """A configuration value is invalid or internally inconsistent."""
