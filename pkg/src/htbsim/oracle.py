"""Analytical steady-state rates and rate-conformance statistics.

``expected_rates`` computes the fluid fixpoint of hierarchical link
sharing by progressive filling: every backlogged leaf first receives
``min(offered, assured)``, then lenders (ancestors with spare assured
capacity) push excess to their unsatisfied borrowers in ascending level
waves, best priority first and split proportionally to quantum, until a
constraint binds (a leaf saturates, a chain class hits its ceiling, or
the lender exhausts its spare).  Each round saturates at least one
constraint, so the iteration terminates.  All arithmetic is exact
(``Fraction``).
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .core import HtbTree

SECOND_NS = 1_000_000_000


@dataclass(frozen=True)
class DeviationStats:
    """Box-plot style summary of per-window absolute deviations, in bps."""

    mean_abs_dev: float
    median_abs_dev: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outlier_count: int
    window_count: int


def expected_rates(tree: HtbTree, active: Mapping[str, int | float | Fraction],
                   ) -> dict[str, Fraction]:
    """Steady-state rate of each backlogged leaf, in bits per second.

    ``active`` maps leaf names to offered rates.  Leaves not present are
    idle and receive no allocation.
    """
    classes = tree.classes
    for name in active:
        idx = tree.name_index.get(name)
        if idx is None or not classes[idx].is_leaf:
            raise KeyError(f"{name!r} is not a leaf of this tree")

    leaves = {tree.name_index[name]: Fraction(offered)
              for name, offered in active.items()}
    rate = {cls.index: Fraction(cls.rate) for cls in classes}
    ceil = {cls.index: Fraction(cls.ceil) for cls in classes}

    # Allocation state; throughput of a class is the sum over its leaves.
    alloc = {idx: min(offered, rate[idx], ceil[idx])
             for idx, offered in leaves.items()}

    def under(idx: int) -> list[int]:
        cls = classes[idx]
        if cls.is_leaf:
            return [idx] if idx in leaves else []
        out: list[int] = []
        for ch in cls.children:
            out.extend(under(ch))
        return out

    leaves_under = {cls.index: under(cls.index) for cls in classes}

    def throughput(idx: int) -> Fraction:
        return sum((alloc[l] for l in leaves_under[idx]), Fraction(0))

    def cap(idx: int) -> Fraction:
        return min(leaves[idx], ceil[idx])

    max_rounds = 3 * len(classes) + len(leaves) + 8
    for _ in range(max_rounds):
        tput = {cls.index: throughput(cls.index) for cls in classes}

        # Chain walk: nearest ancestor with spare assured capacity, unless a
        # ceiling saturates somewhere along the way.
        def lender_of(leaf_idx: int) -> Optional[int]:
            if alloc[leaf_idx] >= cap(leaf_idx):
                return None
            node = leaf_idx
            while True:
                if tput[node] >= ceil[node]:
                    return None        # ceiling binds on the chain
                parent = classes[node].parent
                if parent is None:
                    return None        # ran out of ancestors with spare
                if tput[parent] < rate[parent]:
                    return parent
                node = parent

        groups: dict[int, list[int]] = {}
        for leaf_idx in leaves:
            lender = lender_of(leaf_idx)
            if lender is not None:
                groups.setdefault(lender, []).append(leaf_idx)
        if not groups:
            break

        # Selection scans levels bottom-up, so lending by deeper classes
        # preempts lending by shallower ones whenever link time is contended;
        # the fluid limit is strict level waves.
        lowest = min(classes[lender].level for lender in groups)
        groups = {lender: members for lender, members in groups.items()
                  if classes[lender].level == lowest}

        # Only the best-priority borrowers of each lender grow; each lender
        # lends at unit rate split proportionally to quantum.
        grow: dict[int, Fraction] = {}
        for lender, members in groups.items():
            best = min(classes[l].priority for l in members)
            group = [l for l in members if classes[l].priority == best]
            total_q = sum(classes[l].quantum for l in group)
            for l in group:
                grow[l] = Fraction(classes[l].quantum, total_q)

        def growth_under(idx: int) -> Fraction:
            return sum((grow.get(l, Fraction(0)) for l in leaves_under[idx]),
                       Fraction(0))

        step: Optional[Fraction] = None
        for leaf_idx, g in grow.items():
            step = _fmin(step, (cap(leaf_idx) - alloc[leaf_idx]) / g)
        for cls in classes:
            g = growth_under(cls.index)
            if g > 0:
                step = _fmin(step, (ceil[cls.index] - tput[cls.index]) / g)
                if cls.index in groups:
                    step = _fmin(step, (rate[cls.index] - tput[cls.index]) / g)
        assert step is not None and step > 0, "stalled while distributing excess"

        for leaf_idx, g in grow.items():
            alloc[leaf_idx] += g * step
    else:
        raise AssertionError("progressive filling did not converge")

    return {classes[idx].name: value for idx, value in alloc.items()}


def _fmin(current: Optional[Fraction], candidate: Fraction) -> Fraction:
    return candidate if current is None or candidate < current else current


# -- conformance statistics ---------------------------------------------------


@dataclass(frozen=True)
class RateEpoch:
    """Constant expected rates over ``[start, stop)`` nanoseconds."""

    start: int
    stop: int
    rates: dict[int, Fraction]      # flow id -> expected bps


def build_rate_schedule(tree: HtbTree, sources, flow_leaf: Mapping[int, str],
                        horizon: int) -> list[RateEpoch]:
    """Piecewise-constant expected-rate schedule over a run.

    Epoch boundaries are the source start/stop times; within an epoch the
    active set is fixed and ``expected_rates`` gives the fluid allocation.
    """
    cuts = {0, horizon}
    for src in sources:
        if src.start < horizon:
            cuts.add(src.start)
        cuts.add(min(src.stop, horizon))
    times = sorted(cuts)

    epochs: list[RateEpoch] = []
    for start, stop in zip(times, times[1:]):
        if start >= stop:
            continue
        active: dict[str, Fraction] = {}
        flows: dict[str, int] = {}
        for src in sources:
            if src.start <= start and src.stop > start:
                leaf = flow_leaf[src.flow_id]
                active[leaf] = Fraction(src.packet_size * 8 * SECOND_NS, src.interval)
                flows[leaf] = src.flow_id
        rates = expected_rates(tree, active) if active else {}
        epochs.append(RateEpoch(
            start=start, stop=stop,
            rates={flows[leaf]: bps for leaf, bps in rates.items()},
        ))
    return epochs


def expected_in_window(epochs: Sequence[RateEpoch], flow_id: int,
                       start: int, stop: int) -> Fraction:
    """Time-weighted expected rate for a flow over ``[start, stop)``."""
    total = Fraction(0)
    for epoch in epochs:
        lo = max(start, epoch.start)
        hi = min(stop, epoch.stop)
        if lo < hi and flow_id in epoch.rates:
            total += epoch.rates[flow_id] * (hi - lo)
    return total / (stop - start)


def deviation_stats(measured: Mapping[int, float | Fraction],
                    expected: Mapping[int, float | Fraction] | None = None,
                    ) -> DeviationStats:
    """Summarise absolute deviations for one flow.

    ``measured`` maps window index to measured bps; ``expected`` (same keys)
    to the oracle value, defaulting to zero when a window is missing.
    """
    if not measured:
        raise ValueError("no windows to analyse")
    expected = expected or {}
    devs = sorted(abs(float(m) - float(expected.get(w, 0.0)))
                  for w, m in measured.items())
    return summarize_deviations(devs)


def summarize_deviations(devs: Sequence[float]) -> DeviationStats:
    """Box-plot statistics with whiskers at Q1/Q3 +- 1.5 IQR, clamped to data."""
    if not devs:
        raise ValueError("no deviations to summarise")
    devs = sorted(devs)
    n = len(devs)
    median = statistics.median(devs)
    if n >= 2:
        q1, _, q3 = statistics.quantiles(devs, n=4, method="inclusive")
    else:
        q1 = q3 = median
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    within = [d for d in devs if lo_fence <= d <= hi_fence]
    whisker_low = min(within) if within else q1
    whisker_high = max(within) if within else q3
    outliers = sum(1 for d in devs if d < whisker_low or d > whisker_high)
    return DeviationStats(
        mean_abs_dev=sum(devs) / n,
        median_abs_dev=median,
        q1=q1,
        q3=q3,
        whisker_low=whisker_low,
        whisker_high=whisker_high,
        outlier_count=outliers,
        window_count=n,
    )
