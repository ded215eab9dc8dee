"""Shared exception types, mapped to distinct CLI exit codes in cli.py."""


class ShapeError(ValueError):
    """Incompatible array/tensor shapes."""


class FormatError(ValueError):
    """Malformed binary file: bad magic, version, or truncated payload."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""
