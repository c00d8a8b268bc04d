"""Byzantine-resilient distributed multi-task learning over agent networks."""

from .config import SimulationConfig, load_config, validate
from .engine import Simulation, SimulationResult, run_simulation
from .errors import ConfigError, ResMTLError

__all__ = [
    "ConfigError",
    "ResMTLError",
    "Simulation",
    "SimulationConfig",
    "SimulationResult",
    "load_config",
    "run_simulation",
    "validate",
]
__version__ = "0.1.0"
