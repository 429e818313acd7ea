"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and DataError to exit code 3.
"""


class VoiforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(VoiforgeError):
    """Invalid configuration: bad parameters, malformed config files."""


class DataError(VoiforgeError):
    """Invalid data: malformed files, empty masks, degenerate inputs."""
