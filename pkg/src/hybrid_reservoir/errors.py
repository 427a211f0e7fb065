"""Exception types shared across the simulator and readout."""


class ReservoirError(Exception):
    """Base class for package errors."""


class ConfigurationError(ReservoirError, ValueError):
    """Invalid parameters, inconsistent sizes, or unusable data lengths."""


class InsufficientDataError(ConfigurationError):
    """A trajectory or sequence is too short for the requested operation."""


class DomainError(ReservoirError, ValueError):
    """A position falls outside the simulation box."""


class MetricError(ReservoirError, ValueError):
    """A metric is undefined for the given inputs (e.g. constant target)."""


class SchemaError(ReservoirError, ValueError):
    """A CSV or trajectory file does not match the expected layout."""
