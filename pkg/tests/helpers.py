"""Shared builders for tests: small scenarios and artifact dirs."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from htbsim import artifacts
from htbsim.classify import FlowFilter
from htbsim.config import CbrSource, Scenario
from htbsim.core import HtbClassConfig
from htbsim.engine import Simulator
from htbsim.oracle import build_rate_schedule

SECOND = 1_000_000_000
MS = 1_000_000
US = 1_000


def leaf_cfg(name, rate, ceil, parent="root", prio=7, queue=0, quantum=1500,
             burst=None, cburst=None):
    return HtbClassConfig(
        name=name, rate=rate, ceil=ceil, parent=parent, level=0,
        burst=burst, cburst=cburst, quantum=quantum,
        mbuffer=60 * SECOND, priority=prio, queue_index=queue)


def root_cfg(rate, level=1, burst=None, cburst=None, quantum=1500):
    return HtbClassConfig(
        name="root", rate=rate, ceil=rate, parent=None, level=level,
        burst=burst, cburst=cburst, quantum=quantum, mbuffer=60 * SECOND)


def cbr(flow, start_s, stop_s, rate_bps, size=1500):
    interval = size * 8 * SECOND // rate_bps
    return CbrSource(flow_id=flow, start=int(start_s * SECOND),
                     stop=int(stop_s * SECOND), packet_size=size,
                     interval=interval)


def make_scenario(hierarchy, link_rate, sources, horizon_s, filters=None,
                  queue_capacity=500, name="test"):
    if filters is None:
        leaves = sorted(
            (c for c in hierarchy if c.queue_index is not None),
            key=lambda c: c.queue_index)
        filters = [FlowFilter(target_leaf=leaves[s.flow_id].name, flow_id=s.flow_id)
                   for s in sources]
    return Scenario(
        name=name, hierarchy=hierarchy, hierarchy_path="",
        link_rate=link_rate, sources=sources, filters=filters,
        horizon=int(horizon_s * SECOND), queue_capacity=queue_capacity)


@dataclass
class RunBundle:
    scenario: Scenario
    sim: Simulator
    trace: object
    out_dir: Path
    wall_seconds: float


def run_scenario(scenario: Scenario, out_dir: Path) -> RunBundle:
    """Simulate and write the full artifact set, as the CLI run command does."""
    sim = Simulator(scenario)
    started = time.perf_counter()
    trace = sim.run()
    wall = time.perf_counter() - started
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = build_rate_schedule(sim.tree, scenario.sources, trace.flow_leaf,
                                 scenario.horizon)
    artifacts.write_throughput(out_dir / artifacts.THROUGHPUT_CSV, trace)
    artifacts.write_delays(out_dir / artifacts.DELAYS_CSV, trace)
    artifacts.write_drops(out_dir / artifacts.DROPS_CSV, trace)
    artifacts.write_meta(out_dir / artifacts.META_JSON, scenario, sim.tree,
                         trace, epochs)
    return RunBundle(scenario=scenario, sim=sim, trace=trace, out_dir=out_dir,
                     wall_seconds=wall)
