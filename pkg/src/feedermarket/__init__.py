"""Feeder-based local energy market clearing."""

from .econ import (
    ConsumerParams,
    DomainError,
    OneSidedMarket,
    Participant,
    PlayerAllocation,
    ProsumerParams,
)
from .engine import ClearingOutcome, MarketResult, SolverConfig, run_1smc, run_2smc
from .scenario import PopulationSpec, Scenario, generate_population, load_scenario, table1

__version__ = "0.1.0"
