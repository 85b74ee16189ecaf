"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: data/schema problems exit 2, anything
unexpected exits 4 (see cli.py).
"""


class LesionbenchError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LesionbenchError):
    """Tensor shapes do not agree; the message names both shapes."""


class ConfigError(LesionbenchError):
    """Invalid configuration value (rates, ranges, seeds, search spaces)."""


class SpecError(LesionbenchError):
    """Inconsistent or unparseable model spec."""


class FormatError(LesionbenchError):
    """Corrupt or malformed weight archive."""


class DataError(LesionbenchError):
    """Dataset ingestion or splitting problem (bad rows, schema, class counts)."""


class MetricError(LesionbenchError):
    """Metric undefined for the given inputs (single-class labels, n too small)."""


class TrainingError(LesionbenchError):
    """Training-time failure such as a NaN gradient."""


class NumericsError(LesionbenchError):
    """A forward op produced a non-finite value from finite inputs."""
