"""Simulator and optimizer for uplink networks served by UAVs carrying
stacked-metasurface receivers."""

from .channel import PhaseTensor, SimGeometry, build_transfers, network_capacity
from .orchestrator import Solution, SolveTrace, ao_solve
from .scenario import Scenario, ScenarioConfig, generate_scenario, paper_defaults

__all__ = [
    "PhaseTensor", "SimGeometry", "build_transfers", "network_capacity",
    "Solution", "SolveTrace", "ao_solve",
    "Scenario", "ScenarioConfig", "generate_scenario", "paper_defaults",
]

__version__ = "0.1.0"
