"""Dealer competition in share auctions: static and dynamic equilibria, simulation and checks."""

from .dynamic_equilibrium import DynamicParams, EquilibriumConstants, MarketState, compute_constants
from .errors import ConfigurationError, MarketModelError
from .market_simulator import SimConfig, SimPath, iter_simulate, simulate
from .static_auction import FlowDistribution, StaticParams

__all__ = [
    "DynamicParams",
    "EquilibriumConstants",
    "MarketState",
    "compute_constants",
    "ConfigurationError",
    "MarketModelError",
    "SimConfig",
    "SimPath",
    "simulate",
    "iter_simulate",
    "FlowDistribution",
    "StaticParams",
]
