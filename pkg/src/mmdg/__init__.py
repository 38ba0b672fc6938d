"""Moving-mesh discontinuous Galerkin laboratory for hyperbolic conservation laws."""
from .cfl import CflConfig, DEFAULT_CFL, PRESETS
from .config import ConfigError, ExperimentConfig, load_config
from .runner import RunResult, run_experiment, verify_run
from .solver import Discretization, InstabilityError, MMDGSolver, SolverConfig, SolverState

__version__ = "0.1.0"

__all__ = [
    "CflConfig",
    "ConfigError",
    "DEFAULT_CFL",
    "Discretization",
    "ExperimentConfig",
    "InstabilityError",
    "MMDGSolver",
    "PRESETS",
    "RunResult",
    "SolverConfig",
    "SolverState",
    "load_config",
    "run_experiment",
    "verify_run",
]
