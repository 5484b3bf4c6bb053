"""Simulation of UAV escape control under GPS spoofing.

The main entry points are :func:`spoofguard.config.preset` /
:func:`spoofguard.config.load` for scenarios and
:func:`spoofguard.sim.run_scenario` for closed-loop runs.
"""

from .config import ScenarioConfig, load, preset
from .errors import (
    ConfigurationError,
    DomainError,
    ExportError,
    NumericalError,
    SingularityError,
    SpoofGuardError,
)
from .model import SystemModel, reference_model
from .sim import ScenarioTrace, run_scenario, trace_metrics

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "ExportError",
    "NumericalError",
    "ScenarioConfig",
    "ScenarioTrace",
    "SingularityError",
    "SpoofGuardError",
    "SystemModel",
    "load",
    "reference_model",
    "preset",
    "run_scenario",
    "trace_metrics",
]
