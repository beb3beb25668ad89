"""Figure rendering for run reports (written to files, never shown)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .artifacts import RunDir

SECOND_NS = 1_000_000_000

THROUGHPUT_PNG = "throughput.png"
DEVIATION_PNG = "deviation.png"


def plot_throughput(run: RunDir, out_path: Path) -> None:
    """Per-flow measured throughput over time with the expected rates dashed."""
    window_s = run.window_ns / SECOND_NS
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for flow_id in sorted(run.window_bits):
        bits = run.window_bits[flow_id]
        times = [w * window_s for w in range(len(bits))]
        rates = [b / window_s / 1e6 for b in bits]
        ax.step(times, rates, where="post", label=f"flow {flow_id}", lw=1.2)
    for epoch in run.meta["epochs"]:
        t0 = epoch["start_ns"] / SECOND_NS
        t1 = epoch["stop_ns"] / SECOND_NS
        for fid, bps in epoch["rates_bps"].items():
            ax.hlines(bps / 1e6, t0, t1, colors="black", linestyles="dotted", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("throughput [Mbit/s]")
    ax.set_title(run.meta["scenario"])
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_deviation(devs: dict[int, list[tuple[int, float]]], title: str,
                   out_path: Path) -> None:
    """Box-whisker of per-window absolute deviations, one box per flow."""
    flows = sorted(fid for fid, rows in devs.items() if rows)
    data = [[max(d, 1.0) for _, d in devs[fid]] for fid in flows]  # log-safe floor
    fig, ax = plt.subplots(figsize=(6, 4))
    if data:
        ax.boxplot(data, tick_labels=[str(f) for f in flows], whis=1.5,
                   showmeans=True, meanprops={"marker": "*", "markersize": 8})
        ax.set_yscale("log")
    ax.set_xlabel("flow")
    ax.set_ylabel("abs. deviation [bps]")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
