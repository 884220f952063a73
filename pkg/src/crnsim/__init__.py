"""Discrete-time simulator of update scheduling in a cognitive radar network.

Nodes scattered as a Poisson point process track maneuvering targets with
local IMM filters and send track updates to a fusion centre under a shared
capacity budget.  Five scheduling policies are compared on tracking error,
age of information and missed targets.
"""
from .config import POLICY_NAMES, ConfigError, ScenarioConfig, load_config
from .harness import RunSpec, run_experiment, run_replication
from .outputs import write_outputs

__all__ = [
    "POLICY_NAMES",
    "ConfigError",
    "RunSpec",
    "ScenarioConfig",
    "load_config",
    "run_experiment",
    "run_replication",
    "write_outputs",
]
__version__ = "0.1.0"
