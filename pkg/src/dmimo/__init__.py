"""QoS-driven base-station selection for distributed MIMO downlinks.

Monte Carlo simulation of block-fading channels, effective-capacity delay
constraints, and the single- and multi-user selection schemes that minimise
the average number of cooperating base stations.
"""

from .channel import Deployment, PathLossModel, draw_fading_state, scenario_deployment
from .config import ScenarioConfig, load_config, parse_config, sweep_scenarios
from .harness import SCHEMES, RunResult, interfering_area, run_experiment, sweep, to_csv
from .linalg import mimo_capacity, svd, water_fill
from .qos import QoSSpec, effective_capacity, simulate_queue
from .scenario import PowerPolicy, Scenario, transmit_power
from .tracker import TrackerConfig, track

__all__ = [
    "Deployment",
    "PathLossModel",
    "draw_fading_state",
    "scenario_deployment",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "sweep_scenarios",
    "SCHEMES",
    "RunResult",
    "interfering_area",
    "run_experiment",
    "sweep",
    "to_csv",
    "mimo_capacity",
    "svd",
    "water_fill",
    "QoSSpec",
    "effective_capacity",
    "simulate_queue",
    "PowerPolicy",
    "Scenario",
    "transmit_power",
    "TrackerConfig",
    "track",
]

__version__ = "0.1.0"
