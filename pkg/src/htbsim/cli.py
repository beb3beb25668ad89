"""Command-line surface: validate configs, run scenarios, build reports.

Exit codes: 0 success, 1 validation violations, 2 I/O or parse errors.
Scenario arguments accept a file path or the name of a bundled scenario
(``scenario1``, ``scenario2``, ``scenario3``).
"""

from __future__ import annotations

import argparse
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

from . import artifacts, config
from .config import ConfigError, Scenario
from .core import TreeConfigError, build_tree
from .engine import Simulator
from .oracle import build_rate_schedule

BUNDLED = ("scenario1", "scenario2", "scenario3")


def load_scenario(ref: str, hierarchy_override: Optional[str] = None) -> Scenario:
    """Load a scenario from a path or a bundled name."""
    if ref in BUNDLED and not Path(ref).exists():
        pkg = resources.files("htbsim.scenarios")
        scn_text = (pkg / f"{ref}.scn").read_text()
        scenario_name = ref
        hierarchy_ref = _scenario_hierarchy_ref(scn_text)
        if hierarchy_override:
            hier_text = Path(hierarchy_override).read_text()
            hier_name = hierarchy_override
        else:
            hier_text = (pkg / hierarchy_ref).read_text()
            hier_name = hierarchy_ref
    else:
        path = Path(ref)
        scn_text = path.read_text()
        scenario_name = path.stem
        hierarchy_ref = hierarchy_override or _scenario_hierarchy_ref(scn_text)
        if not hierarchy_ref:
            raise ConfigError("scenario does not reference a hierarchy file", ref)
        hier_path = Path(hierarchy_ref)
        if not hier_path.is_absolute():
            hier_path = path.parent / hier_path
        hier_text = hier_path.read_text()
        hier_name = str(hier_path)
    scenario = config.parse_scenario(scn_text, hier_text,
                                     name=scenario_name, hierarchy_name=hier_name)
    return scenario


def _scenario_hierarchy_ref(text: str) -> str:
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("hierarchy") and "=" in line:
            return line.split("=", 1)[1].strip()
    return ""


def _validate(scenario: Scenario) -> list[str]:
    violations = config.validate(scenario)
    try:
        build_tree(scenario.hierarchy, scenario.link_rate)
    except TreeConfigError as exc:
        violations.append(str(exc))
    return violations


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario, args.hierarchy)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    violations = _validate(scenario)
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 1
    print(f"{scenario.name}: OK "
          f"({len(scenario.hierarchy)} classes, {len(scenario.sources)} sources)")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario, args.hierarchy)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.window is not None:
        scenario.report_window = config.parse_duration(args.window)
    violations = _validate(scenario)
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 1

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    sim = Simulator(scenario)
    started = time.perf_counter()
    trace = sim.run()
    elapsed = time.perf_counter() - started

    epochs = build_rate_schedule(sim.tree, scenario.sources, trace.flow_leaf,
                                 scenario.horizon)
    artifacts.write_throughput(out_dir / artifacts.THROUGHPUT_CSV, trace)
    artifacts.write_delays(out_dir / artifacts.DELAYS_CSV, trace)
    artifacts.write_drops(out_dir / artifacts.DROPS_CSV, trace)
    artifacts.write_meta(out_dir / artifacts.META_JSON, scenario, sim.tree,
                         trace, epochs)

    run_dir = artifacts.load_run_dir(out_dir)
    exclusion = config.parse_duration(args.exclusion) if args.exclusion else 0
    devs = artifacts.flow_deviations(run_dir, exclusion)
    stats = artifacts.compute_stats(devs)
    violations_list = artifacts.ceiling_violations(run_dir)
    report = artifacts.render_report(run_dir, devs, stats, violations_list)
    (out_dir / artifacts.REPORT_TXT).write_text(report)

    print(f"simulated {scenario.horizon / 1e9:.1f} s "
          f"in {elapsed:.1f} s wall clock; artifacts in {out_dir}")
    _print_epoch_summary(trace, run_dir)
    return 0


def _print_epoch_summary(trace, run_dir) -> None:
    window = run_dir.window_ns
    print("epoch means, measured vs expected (Mbit/s):")
    for epoch in run_dir.meta["epochs"]:
        if not epoch["rates_bps"]:
            continue
        t0, t1 = epoch["start_ns"], epoch["stop_ns"]
        cells = []
        for fid_s, exp_bps in sorted(epoch["rates_bps"].items(), key=lambda kv: int(kv[0])):
            fid = int(fid_s)
            w0, w1 = t0 // window, t1 // window
            bits = sum(run_dir.window_bits[fid][w0:w1])
            measured = bits / ((t1 - t0) / 1e9) if t1 > t0 else 0.0
            cells.append(f"flow {fid}: {measured / 1e6:.2f}/{exp_bps / 1e6:.2f}")
        print(f"  [{t0 / 1e9:7.1f}, {t1 / 1e9:7.1f}) s  " + "  ".join(cells))


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.trace_dir)
    try:
        run_dir = artifacts.load_run_dir(out_dir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.window is not None:
        requested = config.parse_duration(args.window)
        run_dir = _regroup(run_dir, requested)
    exclusion = config.parse_duration(args.exclusion) if args.exclusion else 0

    devs = artifacts.flow_deviations(run_dir, exclusion)
    stats = artifacts.compute_stats(devs)
    violations = artifacts.ceiling_violations(run_dir)
    report = artifacts.render_report(run_dir, devs, stats, violations)
    (out_dir / artifacts.REPORT_TXT).write_text(report)
    artifacts.write_deviations_csv(out_dir / artifacts.DEVIATIONS_CSV, devs,
                                   run_dir.window_ns)

    from . import plotting  # defer matplotlib import to the report path

    plotting.plot_throughput(run_dir, out_dir / plotting.THROUGHPUT_PNG)
    plotting.plot_deviation(devs, run_dir.meta["scenario"],
                            out_dir / plotting.DEVIATION_PNG)

    print(report)
    return 0


def _regroup(run_dir: artifacts.RunDir, window_ns: int) -> artifacts.RunDir:
    current = run_dir.window_ns
    if window_ns == current:
        return run_dir
    if window_ns % current != 0:
        raise SystemExit(
            f"--window must be a multiple of the recorded window ({current} ns)")
    factor = window_ns // current
    merged = {
        fid: [sum(bits[i:i + factor]) for i in range(0, len(bits), factor)]
        for fid, bits in run_dir.window_bits.items()
    }
    meta = dict(run_dir.meta)
    meta["window_ns"] = window_ns
    return artifacts.RunDir(meta=meta, window_bits=merged)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htbsim",
        description="Hierarchical token bucket link sharing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario and its hierarchy")
    p_val.add_argument("scenario", help="scenario file or bundled name")
    p_val.add_argument("--hierarchy", help="override the hierarchy file path")
    p_val.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="simulate a scenario and write artifacts")
    p_run.add_argument("scenario", help="scenario file or bundled name")
    p_run.add_argument("--hierarchy", help="override the hierarchy file path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--window", help="report window, e.g. 1s (default from scenario)")
    p_run.add_argument("--exclusion", help="transient exclusion around flow events "
                                           "(default 0)")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="recompute conformance report and figures")
    p_rep.add_argument("trace_dir", help="directory written by 'run'")
    p_rep.add_argument("--window", help="regroup windows (multiple of recorded)")
    p_rep.add_argument("--exclusion", help="transient exclusion around flow events")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
