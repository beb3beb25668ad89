"""Run artifact serialization: delimited outputs, metadata, report text.

A run directory contains ``throughput.csv`` (per-window per-flow bitrate),
``delays.csv`` (per-packet delay), ``drops.csv`` (per-flow drop counts),
``run_meta.json`` (everything the report command needs to recompute
statistics), and ``report.txt``.  All numeric formatting is fixed-width
decimal so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import Scenario
from .core import HtbTree
from .engine import RunTrace
from .oracle import RateEpoch, DeviationStats, summarize_deviations

SECOND_NS = 1_000_000_000

THROUGHPUT_CSV = "throughput.csv"
DELAYS_CSV = "delays.csv"
DROPS_CSV = "drops.csv"
META_JSON = "run_meta.json"
REPORT_TXT = "report.txt"
DEVIATIONS_CSV = "deviations.csv"


def fmt_seconds(ns: int) -> str:
    """Nanoseconds as seconds with exactly six decimals."""
    return f"{ns // SECOND_NS}.{(ns % SECOND_NS) // 1000:06d}"


def fmt_millis(ns: int) -> str:
    """Nanoseconds as milliseconds with exactly six decimals."""
    return f"{ns // 1_000_000}.{ns % 1_000_000:06d}"


def write_throughput(path: Path, trace: RunTrace) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "flow_id", "bits_per_second"])
        for w in range(trace.num_windows()):
            t = fmt_seconds(w * trace.window)
            for flow_id in sorted(trace.window_bits):
                bps = trace.window_bits[flow_id][w] * SECOND_NS / trace.window
                writer.writerow([t, flow_id, f"{bps:.3f}"])


def write_delays(path: Path, trace: RunTrace) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "created_s", "delay_ms"])
        for flow_id in sorted(trace.flows):
            flow = trace.flows[flow_id]
            for created, departed in zip(flow.created, flow.departed):
                writer.writerow([flow_id, fmt_seconds(created),
                                 fmt_millis(departed - created)])


def write_drops(path: Path, trace: RunTrace) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "count"])
        for flow_id in sorted(trace.flows):
            writer.writerow([flow_id, trace.flows[flow_id].drops])


def write_meta(path: Path, scenario: Scenario, tree: HtbTree, trace: RunTrace,
               epochs: list[RateEpoch]) -> None:
    classes = []
    for cls in tree.classes:
        classes.append({
            "name": cls.name,
            "parent": tree.classes[cls.parent].name if cls.parent is not None else None,
            "rate_bps": cls.rate,
            "ceil_bps": cls.ceil,
            "burst_bytes": cls.burst_bytes(),
            "cburst_bytes": cls.cburst_bytes(),
            "quantum_bytes": cls.quantum,
            "leaf": cls.is_leaf,
            "queue": cls.queue_index,
            "priority": cls.priority if cls.is_leaf else None,
        })
    last_departure = {
        str(fid): (flow.departed[-1] if flow.departed else None)
        for fid, flow in trace.flows.items()
    }
    meta = {
        "scenario": scenario.name,
        "link_rate_bps": scenario.link_rate,
        "horizon_ns": scenario.horizon,
        "window_ns": trace.window,
        "queue_capacity": scenario.queue_capacity,
        "classes": classes,
        "flow_leaf": {str(fid): leaf for fid, leaf in trace.flow_leaf.items()},
        "sources": [
            {
                "flow": src.flow_id,
                "start_ns": src.start,
                "stop_ns": src.stop,
                "packet_size": src.packet_size,
                "interval_ns": src.interval,
            }
            for src in scenario.sources
        ],
        "epochs": [
            {
                "start_ns": e.start,
                "stop_ns": e.stop,
                "rates_bps": {str(fid): float(bps) for fid, bps in sorted(e.rates.items())},
            }
            for e in epochs
        ],
        "last_departure_ns": last_departure,
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


@dataclass
class RunDir:
    """Parsed artifacts of a finished run."""

    meta: dict
    window_bits: dict[int, list[float]]     # flow -> bits per window

    @property
    def window_ns(self) -> int:
        return self.meta["window_ns"]

    @property
    def horizon_ns(self) -> int:
        return self.meta["horizon_ns"]


def load_run_dir(out_dir: Path) -> RunDir:
    meta_path = out_dir / META_JSON
    tp_path = out_dir / THROUGHPUT_CSV
    if not meta_path.is_file() or not tp_path.is_file():
        raise FileNotFoundError(f"{out_dir} does not contain run artifacts")
    meta = json.loads(meta_path.read_text())
    window = meta["window_ns"]
    num_windows = -(-meta["horizon_ns"] // window) if meta["horizon_ns"] else 0
    window_bits: dict[int, list[float]] = {
        int(fid): [0.0] * num_windows for fid in meta["flow_leaf"]
    }
    with tp_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected_header = ["time_s", "flow_id", "bits_per_second"]
        if reader.fieldnames != expected_header:
            raise ValueError(f"{tp_path}: unexpected header {reader.fieldnames}")
        for row in reader:
            flow_id = int(row["flow_id"])
            idx = round(float(row["time_s"]) * SECOND_NS) // window
            bits = float(row["bits_per_second"]) * window / SECOND_NS
            if flow_id in window_bits and 0 <= idx < num_windows:
                window_bits[flow_id][idx] = bits
    return RunDir(meta=meta, window_bits=window_bits)


# -- conformance computation over artifacts -----------------------------------


def flow_deviations(run: RunDir, exclusion_ns: int = 0,
                    ) -> dict[int, list[tuple[int, float]]]:
    """Per-flow ``(window_index, abs_deviation_bps)`` lists.

    Windows over the source lifetime ``[start, stop)`` count; windows
    overlapping an exclusion region around any source arrival or departure
    are skipped when ``exclusion_ns`` > 0.
    """
    meta = run.meta
    window = run.window_ns
    epochs = meta["epochs"]
    events = []
    for src in meta["sources"]:
        events.append(src["start_ns"])
        events.append(src["stop_ns"])

    def excluded(w_start: int, w_stop: int) -> bool:
        if exclusion_ns <= 0:
            return False
        return any(w_start < e + exclusion_ns and w_stop > e - exclusion_ns
                   for e in events)

    def expected_bps(flow_id: int, w_start: int, w_stop: int) -> float:
        total = 0.0
        for epoch in epochs:
            lo = max(w_start, epoch["start_ns"])
            hi = min(w_stop, epoch["stop_ns"])
            rate = epoch["rates_bps"].get(str(flow_id))
            if lo < hi and rate is not None:
                total += rate * (hi - lo)
        return total / (w_stop - w_start)

    out: dict[int, list[tuple[int, float]]] = {}
    for src in meta["sources"]:
        flow_id = src["flow"]
        if not run.window_bits.get(flow_id):
            out[flow_id] = []
            continue
        first_w = src["start_ns"] // window
        last_w = min((src["stop_ns"] - 1) // window,
                     len(run.window_bits[flow_id]) - 1)
        devs = []
        for w in range(first_w, last_w + 1):
            w_start, w_stop = w * window, (w + 1) * window
            if excluded(w_start, w_stop):
                continue
            measured = run.window_bits[flow_id][w] * SECOND_NS / window
            devs.append((w, abs(measured - expected_bps(flow_id, w_start, w_stop))))
        out[flow_id] = devs
    return out


def ceiling_violations(run: RunDir) -> list[tuple[str, int, float, float]]:
    """Windows where a class exceeded its amortized ceiling envelope.

    The envelope is ``ceil*window + cburst*8`` plus one maximum packet:
    packets are atomic, so a send admitted at a near-empty bucket may drive
    it negative by almost a full packet, and that sub-packet slack shows up
    at window boundaries.  Returns ``(class_name, window_index,
    delivered_bits, allowed_bits)``.
    """
    meta = run.meta
    window = run.window_ns
    parents = {c["name"]: c["parent"] for c in meta["classes"]}
    limits = {c["name"]: (c["ceil_bps"], c["cburst_bytes"]) for c in meta["classes"]}
    leaf_of_flow = {int(fid): leaf for fid, leaf in meta["flow_leaf"].items()}
    max_packet = max((src["packet_size"] for src in meta["sources"]), default=0)

    num_windows = len(next(iter(run.window_bits.values()), []))
    per_class: dict[str, list[float]] = {name: [0.0] * num_windows for name in parents}
    for flow_id, bits in run.window_bits.items():
        name = leaf_of_flow[flow_id]
        while name is not None:
            row = per_class[name]
            for w, b in enumerate(bits):
                row[w] += b
            name = parents[name]

    violations = []
    for name, row in per_class.items():
        ceil_bps, cburst = limits[name]
        allowed = ceil_bps * window / SECOND_NS + (cburst + max_packet) * 8
        for w, bits in enumerate(row):
            if bits > allowed:
                violations.append((name, w, bits, allowed))
    return violations


def write_deviations_csv(path: Path, devs: dict[int, list[tuple[int, float]]],
                         window_ns: int) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "time_s", "abs_deviation_bps"])
        for flow_id in sorted(devs):
            for w, dev in devs[flow_id]:
                writer.writerow([flow_id, fmt_seconds(w * window_ns), f"{dev:.3f}"])


def render_report(run: RunDir, devs: dict[int, list[tuple[int, float]]],
                  stats: dict[int, Optional[DeviationStats]],
                  violations: list[tuple[str, int, float, float]]) -> str:
    meta = run.meta
    lines = []
    lines.append(f"Scenario: {meta['scenario']}")
    lines.append(f"Link rate: {meta['link_rate_bps'] / 1e6:.3f} Mbit/s"
                 f"   Horizon: {meta['horizon_ns'] / SECOND_NS:.1f} s"
                 f"   Window: {run.window_ns / SECOND_NS:.6f} s")
    lines.append("")
    lines.append("Expected steady-state rates (fluid allocation):")
    for epoch in meta["epochs"]:
        if not epoch["rates_bps"]:
            continue
        rates = "  ".join(f"flow {fid}: {bps / 1e6:.3f}"
                          for fid, bps in sorted(epoch["rates_bps"].items(),
                                                 key=lambda kv: int(kv[0])))
        lines.append(f"  [{epoch['start_ns'] / SECOND_NS:7.1f}, "
                     f"{epoch['stop_ns'] / SECOND_NS:7.1f}) s  {rates}  Mbit/s")
    lines.append("")
    lines.append("Per-flow absolute deviation from expected (kbps):")
    lines.append(f"  {'flow':>4}  {'windows':>7}  {'mean':>9}  {'median':>9}  "
                 f"{'q1':>9}  {'q3':>9}  {'whisk_lo':>9}  {'whisk_hi':>9}  {'outliers':>8}")
    for flow_id in sorted(stats):
        st = stats[flow_id]
        if st is None:
            lines.append(f"  {flow_id:>4}  {'-':>7}")
            continue
        lines.append(
            f"  {flow_id:>4}  {st.window_count:>7}  {st.mean_abs_dev / 1e3:>9.3f}  "
            f"{st.median_abs_dev / 1e3:>9.3f}  {st.q1 / 1e3:>9.3f}  {st.q3 / 1e3:>9.3f}  "
            f"{st.whisker_low / 1e3:>9.3f}  {st.whisker_high / 1e3:>9.3f}  "
            f"{st.outlier_count:>8}")
    lines.append("")
    if violations:
        lines.append(f"Ceiling audit: {len(violations)} violation(s)")
        for name, w, bits, allowed in violations[:50]:
            lines.append(f"  {name}: window {w}: delivered {bits:.0f} bits "
                         f"> allowed {allowed:.0f}")
    else:
        lines.append("Ceiling audit: no violations (per-window class bits within "
                     "ceil*window + cburst*8, amortized by one max packet)")
    lines.append("")
    return "\n".join(lines)


def compute_stats(devs: dict[int, list[tuple[int, float]]],
                  ) -> dict[int, Optional[DeviationStats]]:
    return {
        flow_id: summarize_deviations([d for _, d in rows]) if rows else None
        for flow_id, rows in devs.items()
    }
