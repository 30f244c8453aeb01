"""Exception classes shared across the package.

The CLI maps these onto distinct exit codes, so new error conditions should
reuse one of these families rather than raising bare exceptions.
"""


class YgiError(Exception):
    """Base class for all package errors."""


class ConfigError(YgiError):
    """Invalid configuration value, key, or combination."""


class GeometryError(YgiError):
    """Layer/grid geometry that cannot be realized."""


class FormatError(YgiError):
    """Malformed or corrupt file content (IDX, dataset, checkpoint)."""


class NumericError(YgiError):
    """Numeric failure at run time (divergence, degenerate statistics)."""
