"""Error types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific one that applies instead of bare exceptions.
"""


class ConfigError(Exception):
    """Bad or inconsistent configuration (unknown keys, invalid values)."""


class DataError(Exception):
    """Unusable input data: missing files, bad shapes, failed checksums."""


class NumericError(Exception):
    """Non-finite values where finite ones are required (NaN loss etc.)."""
