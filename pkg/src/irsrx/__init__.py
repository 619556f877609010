"""Two-stage tensor receiver for IRS-assisted uplinks with channel aging."""

from .config import ConfigError, SystemConfig, load_config, substream
from .harness import ExperimentSpec, emit_outputs, nmse, run_scenario, run_sweep
from .parkron import EstimationError, NumericalError, run_stage1
from .tbt import track_frame

__all__ = [
    "ConfigError",
    "EstimationError",
    "ExperimentSpec",
    "NumericalError",
    "SystemConfig",
    "emit_outputs",
    "load_config",
    "nmse",
    "run_scenario",
    "run_stage1",
    "run_sweep",
    "substream",
    "track_frame",
]

__version__ = "0.1.0"
