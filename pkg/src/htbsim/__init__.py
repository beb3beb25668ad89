"""Hierarchical token bucket link sharing with a deterministic simulator."""

from .classify import Dropped, Enqueued, FlowFilter, admit, classify
from .config import (CbrSource, ConfigError, Scenario, parse_hierarchy,
                     parse_scenario, serialize_hierarchy, validate)
from .core import (ClassMode, HtbClassConfig, HtbTree, NextEventTime, Selected,
                   TreeConfigError, build_tree, replenish)
from .engine import RunTrace, Simulator, run, transmission_time
from .oracle import DeviationStats, build_rate_schedule, deviation_stats, expected_rates
from .queues import LeafQueue, Packet

__version__ = "0.1.0"

__all__ = [
    "CbrSource",
    "ClassMode",
    "ConfigError",
    "DeviationStats",
    "Dropped",
    "Enqueued",
    "FlowFilter",
    "HtbClassConfig",
    "HtbTree",
    "LeafQueue",
    "NextEventTime",
    "Packet",
    "RunTrace",
    "Scenario",
    "Selected",
    "Simulator",
    "TreeConfigError",
    "admit",
    "build_rate_schedule",
    "build_tree",
    "classify",
    "deviation_stats",
    "expected_rates",
    "parse_hierarchy",
    "parse_scenario",
    "replenish",
    "run",
    "serialize_hierarchy",
    "transmission_time",
    "validate",
]
