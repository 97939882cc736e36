"""Discrete-event simulator for software-defined versus bus-based in-vehicle networks."""

from .engine import MS, NS, S, US, Simulator
from .netmodel import Topology, TopologyError, bundled_scenario, load_topology
from .scenario import RunResult, TimingConfig, compare, run

__version__ = "0.1.0"

__all__ = [
    "MS", "NS", "S", "US", "Simulator", "Topology", "TopologyError", "bundled_scenario", "load_topology",
    "RunResult", "TimingConfig", "compare", "run",
]
