"""Deterministic discrete-event loop: CBR sources, one shaped link.

Events execute in ``(time, kind, sequence)`` order with transmission
completions before scheduler wakes before source emissions at equal
timestamps.  All time is integer nanoseconds, so identical scenarios
produce bit-identical traces on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Optional

from .classify import classify as _classify_flow
from .config import Scenario
from .core import HtbTree, NextEventTime, build_tree
from .queues import LeafQueue, Packet

SECOND_NS = 1_000_000_000

# Kind codes double as the equal-time priority.
TX_COMPLETE = 0
SCHEDULER_WAKE = 1
SOURCE_PACKET = 2


def transmission_time(size_bytes: int, rate_bps: int) -> int:
    """Serialization delay in nanoseconds, rounded up to 1 ns."""
    if rate_bps <= 0:
        raise ValueError("link rate must be positive")
    return -(-size_bytes * 8 * SECOND_NS // rate_bps)


@dataclass
class FlowTrace:
    """Departure records of one flow."""

    created: list[int] = field(default_factory=list)    # ns
    departed: list[int] = field(default_factory=list)   # ns
    sequences: list[int] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)      # bytes
    delivered_bytes: int = 0
    drops: int = 0               # queue-full plus unmatched packets


@dataclass
class QueueStats:
    offered: int
    pops: int
    drops: int
    residual: int


@dataclass
class RunTrace:
    """Everything observed during one run."""

    horizon: int
    window: int
    flows: dict[int, FlowTrace]
    window_bits: dict[int, list[int]]      # flow id -> bits per window
    queue_stats: dict[str, QueueStats]
    flow_leaf: dict[int, str]
    link_busy_ns: int

    def num_windows(self) -> int:
        return len(next(iter(self.window_bits.values()))) if self.window_bits else 0

    def window_rate_bps(self, flow_id: int, window_index: int) -> float:
        bits = self.window_bits[flow_id][window_index]
        return bits * SECOND_NS / self.window

    def mean_rate_bps(self, flow_id: int, start_s: float, stop_s: float) -> float:
        """Mean delivered rate over ``[start_s, stop_s)`` seconds."""
        start = int(start_s * SECOND_NS)
        stop = int(stop_s * SECOND_NS)
        flow = self.flows[flow_id]
        bits = 0
        for t, size in zip(flow.departed, flow.sizes):
            if start <= t < stop:
                bits += size * 8
        return bits * SECOND_NS / (stop - start)


def record_departure(trace: RunTrace, flow_id: int, size: int,
                     created_at: int, departed_at: int, sequence: int) -> None:
    """Append one departure and bucket its bits into the report window."""
    flow = trace.flows[flow_id]
    flow.created.append(created_at)
    flow.departed.append(departed_at)
    flow.sequences.append(sequence)
    flow.sizes.append(size)
    flow.delivered_bytes += size
    windows = trace.window_bits[flow_id]
    idx = departed_at // trace.window
    if idx < len(windows):
        windows[idx] += size * 8


class Simulator:
    """Single-scenario event loop; one instance per run."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.tree: HtbTree = build_tree(scenario.hierarchy, scenario.link_rate)
        cap = scenario.queue_capacity
        self.queues: dict[str, LeafQueue] = {
            name: LeafQueue(name, cap) for name in self.tree.leaf_names()
        }
        # Filters only see per-flow metadata, so the binding is per source.
        self.flow_leaf: dict[int, Optional[str]] = {
            src.flow_id: _classify_flow(scenario.filters, src)
            for src in scenario.sources
        }

    def run(self) -> RunTrace:
        scenario = self.scenario
        tree = self.tree
        queues = self.queues
        horizon = scenario.horizon
        window = scenario.report_window
        num_windows = -(-horizon // window) if horizon else 0
        link_rate = scenario.link_rate

        trace = RunTrace(
            horizon=horizon,
            window=window,
            flows={src.flow_id: FlowTrace() for src in scenario.sources},
            window_bits={src.flow_id: [0] * num_windows for src in scenario.sources},
            queue_stats={},
            flow_leaf={fid: leaf for fid, leaf in self.flow_leaf.items() if leaf},
            link_busy_ns=0,
        )

        heap: list[tuple[int, int, int, object]] = []
        seq_counter = 0

        def push_event(t: int, kind: int, payload: object) -> None:
            nonlocal seq_counter
            seq_counter += 1
            heappush(heap, (t, kind, seq_counter, payload))

        sources = {src.flow_id: src for src in scenario.sources}
        next_seq = {src.flow_id: 0 for src in scenario.sources}
        for src in scenario.sources:
            if src.start < src.stop and src.start < horizon:
                push_event(src.start, SOURCE_PACKET, src.flow_id)

        link_busy = False
        pending_wake: Optional[int] = None

        def dispatch(now: int) -> None:
            nonlocal link_busy, pending_wake
            if link_busy or tree.total_backlog == 0:
                return
            sel = tree.dequeue_select(now)
            if isinstance(sel, NextEventTime):
                wake_at = max(sel.time, now + 1)
                if pending_wake is None or wake_at < pending_wake:
                    pending_wake = wake_at
                    push_event(wake_at, SCHEDULER_WAKE, None)
                return
            leaf = sel.leaf
            packet = queues[leaf].pop()
            tree.charge(leaf, packet.size, now)
            done = now + transmission_time(packet.size, link_rate)
            link_busy = True
            trace.link_busy_ns += done - now
            push_event(done, TX_COMPLETE, packet)

        while heap:
            now, kind, _, payload = heappop(heap)
            if now >= horizon:
                break
            if kind == SOURCE_PACKET:
                flow_id = payload
                src = sources[flow_id]
                seq = next_seq[flow_id]
                next_seq[flow_id] = seq + 1
                leaf = self.flow_leaf[flow_id]
                if leaf is None:
                    trace.flows[flow_id].drops += 1
                else:
                    packet = Packet(flow_id, src.packet_size, now, seq)
                    if queues[leaf].push(packet):
                        tree.enqueue_notify(leaf, now)
                        if not link_busy:
                            dispatch(now)
                    else:
                        trace.flows[flow_id].drops += 1
                nxt = now + src.interval
                if nxt < src.stop and nxt < horizon:
                    push_event(nxt, SOURCE_PACKET, flow_id)
            elif kind == TX_COMPLETE:
                packet = payload
                record_departure(trace, packet.flow_id, packet.size,
                                 packet.created_at, now, packet.sequence)
                link_busy = False
                dispatch(now)
            else:  # SCHEDULER_WAKE
                if pending_wake is not None and now >= pending_wake:
                    pending_wake = None
                if not link_busy:
                    dispatch(now)

        for name, q in queues.items():
            trace.queue_stats[name] = QueueStats(
                offered=q.offered, pops=q.pops, drops=q.drops, residual=len(q))
        return trace


def run(scenario: Scenario) -> RunTrace:
    """Execute a validated scenario and return the full trace."""
    return Simulator(scenario).run()
