"""Shared exception types, one per error category used across the package."""


class StandbenchError(Exception):
    """Base class for all package errors."""


class ConfigError(StandbenchError):
    """Invalid configuration or incompatible tensor shapes."""


class IngestError(StandbenchError):
    """CSV / config file could not be parsed; message names row and column."""


class SplitError(StandbenchError):
    """Labeled-prefix split impossible for the requested threshold."""


class ContractError(StandbenchError):
    """Supervision contract violated (e.g. supervised fit without labels)."""


class MetricError(StandbenchError):
    """Metric undefined for the given inputs (e.g. single-class labels)."""
