"""Shared exception types."""


class DasynthError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DasynthError):
    """Bad run configuration (unknown key, wrong type, missing value)."""
