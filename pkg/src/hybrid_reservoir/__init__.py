"""Agent-based hybrid artificial-cell / bacterial reservoir with a linear readout."""
from .errors import (ConfigurationError, DomainError, InsufficientDataError, MetricError,
                     ReservoirError, SchemaError)
from .reservoir import SimConfig, StateTrajectory, run_simulation

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DomainError", "InsufficientDataError", "MetricError",
    "ReservoirError", "SchemaError", "SimConfig", "StateTrajectory", "run_simulation",
]
