"""Hierarchical token bucket scheduling discipline.

The tree tracks class state (dual token buckets, modes, borrow feeds, DRR
cursors) but holds no packets; it only mirrors leaf-queue occupancy reported
through :meth:`HtbTree.enqueue_notify` and :meth:`HtbTree.charge`.

Token accounting uses integer "bit-nanoseconds": one byte is ``8e9`` units,
so replenishing by ``rate_bps * dt_ns`` and charging by ``bytes * 8e9`` are
both exact in integer arithmetic.  Token counts are written only by
:meth:`HtbTree.charge` (and the explicit ``replenish`` helper); mode changes
at bucket-refill boundaries are computed from virtually replenished buckets
so that selection never mutates token state.
"""

from __future__ import annotations

import heapq
import logging
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Union

log = logging.getLogger(__name__)

# One byte expressed in scaled bucket units (bits times nanoseconds/second).
UNITS_PER_BYTE = 8_000_000_000

MTU = 1500                      # default max packet size, bytes
NUM_PRIOS = 8                   # valid priorities are 0 (highest) .. 7
DEFAULT_MBUFFER_NS = 60_000_000_000  # 60 s replenish-delta cap


class ClassMode(IntEnum):
    """Sending state of a class, derived from bucket signs."""

    CAN_SEND = 0
    MAY_BORROW = 1
    CANT_SEND = 2


class TreeConfigError(ValueError):
    """Raised by ``build_tree`` for a structurally invalid hierarchy."""


@dataclass
class HtbClassConfig:
    """Static per-class settings.

    ``burst``/``cburst`` are bucket capacities in bytes, ``quantum`` is the
    DRR allowance in bytes, ``mbuffer`` caps the elapsed time credited in a
    single replenish.  Leaf-only fields (``priority``, ``queue_index``) must
    be ``None`` on inner classes.  Optional fields left as ``None`` get
    defaults derived from the rates when the tree is built.
    """

    name: str
    rate: int                    # assured rate, bits per second
    ceil: int                    # ceiling rate, bits per second
    parent: Optional[str] = None
    level: int = 0
    burst: Optional[int] = None
    cburst: Optional[int] = None
    quantum: Optional[int] = None
    mbuffer: Optional[int] = None   # nanoseconds
    priority: Optional[int] = None
    queue_index: Optional[int] = None


def default_burst(rate_bps: int) -> int:
    """Bucket capacity covering 10 ms at the given rate, at least one MTU."""
    return max(MTU, rate_bps * 10 // 1000 // 8)


def default_quantum(rate_bps: int) -> int:
    """DRR allowance: a tenth of the per-second byte budget, at least one MTU."""
    return max(MTU, rate_bps // 8 // 10)


class _Feed:
    """Ordered set of active class indices with a persistent DRR cursor.

    ``ptr`` names the class currently owning the round.  When that class is
    removed, its index is kept as a recovery hint so the round resumes at
    the next-higher index instead of restarting.
    """

    __slots__ = ("ids", "ptr", "recover")

    def __init__(self) -> None:
        self.ids: list[int] = []
        self.ptr: Optional[int] = None
        self.recover: Optional[int] = None

    def __contains__(self, idx: int) -> bool:
        i = bisect_left(self.ids, idx)
        return i < len(self.ids) and self.ids[i] == idx

    def insert(self, idx: int) -> None:
        insort(self.ids, idx)

    def remove(self, idx: int) -> None:
        i = bisect_left(self.ids, idx)
        if i >= len(self.ids) or self.ids[i] != idx:
            raise KeyError(idx)
        del self.ids[i]
        if self.ptr == idx:
            self.recover = idx
            self.ptr = None

    def current(self) -> Optional[int]:
        """Class owning the cursor, or ``None`` when past the right end."""
        if self.ptr is not None:
            return self.ptr
        if self.recover is not None:
            i = bisect_left(self.ids, self.recover)
            self.recover = None
            if i < len(self.ids):
                self.ptr = self.ids[i]
                return self.ptr
        return None

    def rewind(self) -> Optional[int]:
        self.ptr = self.ids[0] if self.ids else None
        return self.ptr

    def advance(self) -> None:
        """Move the cursor to the next-higher index (``None`` past the end)."""
        if self.ptr is None:
            return
        i = bisect_right(self.ids, self.ptr)
        self.ptr = self.ids[i] if i < len(self.ids) else None


class HtbClass:
    """Mutable state of one tree node."""

    __slots__ = (
        "cfg", "index", "parent", "children", "level",
        "rate", "ceil", "burst_u", "cburst_u", "quantum", "mbuffer",
        "priority", "queue_index",
        "tokens", "ctokens", "last_update", "mode",
        "prio_activity", "backlog", "feed", "deficit", "wait_gen",
    )

    def __init__(self, cfg: HtbClassConfig, index: int) -> None:
        self.cfg = cfg
        self.index = index
        self.parent: Optional[int] = None
        self.children: list[int] = []
        self.level = 0
        self.rate = cfg.rate
        self.ceil = cfg.ceil
        burst = cfg.burst if cfg.burst is not None else default_burst(cfg.rate)
        cburst = cfg.cburst if cfg.cburst is not None else default_burst(cfg.ceil)
        self.burst_u = burst * UNITS_PER_BYTE
        self.cburst_u = cburst * UNITS_PER_BYTE
        self.quantum = cfg.quantum if cfg.quantum is not None else default_quantum(cfg.rate)
        self.mbuffer = cfg.mbuffer if cfg.mbuffer is not None else DEFAULT_MBUFFER_NS
        self.priority = cfg.priority if cfg.priority is not None else NUM_PRIOS - 1
        self.queue_index = cfg.queue_index
        self.tokens = self.burst_u
        self.ctokens = self.cburst_u
        self.last_update = 0
        self.mode = ClassMode.CAN_SEND
        self.prio_activity = 0          # bitmask of priorities with demand
        self.backlog = 0                # mirrored leaf queue length (leaves)
        self.feed: list[_Feed] = []     # per-priority borrower feeds (inner)
        self.deficit: list[int] = []    # DRR deficit per selection level (leaves)
        self.wait_gen = 0               # invalidation counter for wait entries

    @property
    def name(self) -> str:
        return self.cfg.name

    @property
    def is_leaf(self) -> bool:
        # The root is never a leaf, even childless: it owns no queue.
        return self.parent is not None and not self.children

    def burst_bytes(self) -> int:
        return self.burst_u // UNITS_PER_BYTE

    def cburst_bytes(self) -> int:
        return self.cburst_u // UNITS_PER_BYTE


@dataclass(frozen=True)
class ClassSnapshot:
    """Read-only view of a class used by tests and trace output."""

    name: str
    tokens: float                # bytes, may be fractional or negative
    ctokens: float
    mode: ClassMode
    deficit: tuple[int, ...]
    backlog: int
    active: bool
    last_update: int


@dataclass(frozen=True)
class Selected:
    """Outcome of a selection round: a leaf to dequeue from."""

    leaf: str


@dataclass(frozen=True)
class NextEventTime:
    """No leaf is eligible; retry at ``time`` (earliest bucket refill)."""

    time: int


SelectResult = Union[Selected, NextEventTime]


def replenish(cls: HtbClass, now: int) -> None:
    """Credit both buckets for the time since ``last_update``.

    The credited interval is capped at ``mbuffer`` and each bucket at its
    burst capacity.  The mode is recomputed from the fresh bucket signs.
    """
    if now < cls.last_update:
        raise ValueError("time went backwards")
    dt = min(now - cls.last_update, cls.mbuffer)
    cls.tokens = min(cls.burst_u, cls.tokens + cls.rate * dt)
    cls.ctokens = min(cls.cburst_u, cls.ctokens + cls.ceil * dt)
    cls.last_update = now
    cls.mode = _mode_from_buckets(cls.tokens, cls.ctokens)


def _mode_from_buckets(tokens: int, ctokens: int) -> ClassMode:
    # The ceiling bucket wins when both tests would apply.
    if ctokens < 0:
        return ClassMode.CANT_SEND
    if tokens >= 0:
        return ClassMode.CAN_SEND
    return ClassMode.MAY_BORROW


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class HtbTree:
    """Class hierarchy plus the selection machinery.

    ``rows[level][prio]`` holds the active CAN_SEND classes of a level (its
    self feed); each inner class keeps per-priority feeds of its active
    MAY_BORROW children.  ``wait_pq[level]`` is a lazy min-heap of
    ``(wake_time, class_index, generation)`` entries for classes pending a
    mode upgrade.
    """

    def __init__(self, classes: list[HtbClass], name_index: dict[str, int],
                 root_index: int, num_levels: int) -> None:
        self.classes = classes
        self.name_index = name_index
        self.root_index = root_index
        self.num_levels = num_levels
        self.rows: list[list[_Feed]] = [
            [_Feed() for _ in range(NUM_PRIOS)] for _ in range(num_levels)
        ]
        self.wait_pq: list[list[tuple[int, int, int]]] = [[] for _ in range(num_levels)]
        self.total_backlog = 0
        self._last_selection: Optional[tuple[int, int, int]] = None

    # -- introspection ----------------------------------------------------

    def leaf_names(self) -> list[str]:
        return [c.name for c in self.classes if c.is_leaf]

    def snapshot(self, name: str) -> ClassSnapshot:
        cls = self.classes[self._index_of(name)]
        return ClassSnapshot(
            name=cls.name,
            tokens=cls.tokens / UNITS_PER_BYTE,
            ctokens=cls.ctokens / UNITS_PER_BYTE,
            mode=cls.mode,
            deficit=tuple(cls.deficit),
            backlog=cls.backlog,
            active=bool(cls.prio_activity),
            last_update=cls.last_update,
        )

    def ancestors(self, name: str) -> list[str]:
        """Names on the path from ``name``'s parent up to the root."""
        cls = self.classes[self._index_of(name)]
        out = []
        while cls.parent is not None:
            cls = self.classes[cls.parent]
            out.append(cls.name)
        return out

    def _index_of(self, name: str) -> int:
        try:
            return self.name_index[name]
        except KeyError:
            raise KeyError(f"unknown class {name!r}") from None

    # -- occupancy notifications ------------------------------------------

    def enqueue_notify(self, leaf_name: str, now: int) -> None:
        """Record one enqueued packet; activate the leaf if it was idle.

        Idempotent with respect to the activation structures: a second
        notification on an already-active leaf only bumps the occupancy
        mirror.
        """
        cls = self.classes[self._index_of(leaf_name)]
        if not cls.is_leaf:
            raise ValueError(f"{leaf_name!r} is not a leaf class")
        cls.backlog += 1
        self.total_backlog += 1
        if not cls.prio_activity:
            cls.prio_activity = 1 << cls.priority
            self._activate_prios(cls, cls.prio_activity)

    # -- selection ---------------------------------------------------------

    def dequeue_select(self, now: int) -> SelectResult:
        """Pick the next leaf to dequeue, or the earliest wake time.

        Levels are scanned from the leaves upward and priorities from 0
        (highest); within a (level, priority) row the persistent DRR cursors
        walk down borrow feeds to a leaf.  Due wait-queue entries are
        processed first so modes are current.  Token counts are not
        modified.
        """
        if self.total_backlog == 0:
            raise RuntimeError("dequeue_select called with all queues empty")
        for level in range(self.num_levels):
            self._do_events(level, now)
        for level in range(self.num_levels):
            row = self.rows[level]
            for prio in range(NUM_PRIOS):
                if row[prio].ids:
                    leaf_idx = self._lookup_leaf(row[prio], prio)
                    self._last_selection = (leaf_idx, level, prio)
                    return Selected(self.classes[leaf_idx].name)
        wake = self.next_event_time()
        if wake is None:
            raise AssertionError("backlogged tree with no eligible leaf and no wake")
        return NextEventTime(wake)

    def next_event_time(self) -> Optional[int]:
        """Earliest pending wake time of a class gating demand.

        ``None`` when a leaf is currently eligible or nothing is backlogged.
        """
        if self.total_backlog == 0:
            return None
        for row in self.rows:
            for feed in row:
                if feed.ids:
                    return None
        best: Optional[int] = None
        for heap in self.wait_pq:
            for t, idx, gen in heap:
                cls = self.classes[idx]
                if gen == cls.wait_gen and cls.prio_activity:
                    if best is None or t < best:
                        best = t
        return best

    def _lookup_leaf(self, row_feed: _Feed, prio: int) -> int:
        # Hierarchical cursor walk: the deepest cursor rotates per DRR round
        # and wrapping a feed advances the cursor one level up.
        stack = [row_feed]
        for _ in range(65536):
            feed = stack[-1]
            cur = feed.current()
            if cur is None:
                if feed.rewind() is None:
                    raise AssertionError("empty feed reached during lookup")
                if len(stack) > 1:
                    stack.pop()
                    stack[-1].advance()
                continue
            cls = self.classes[cur]
            if cls.is_leaf:
                return cur
            stack.append(cls.feed[prio])
        raise AssertionError("cursor walk did not terminate")

    # -- charging -----------------------------------------------------------

    def charge(self, leaf_name: str, packet_bytes: int, now: int) -> None:
        """Account one dequeued packet against the selected leaf.

        Must follow a :class:`Selected` result for the same leaf.  Updates
        the DRR deficit (advancing the round cursor when it drops below
        zero), mirrors the queue occupancy, and walks the path to the root
        replenishing every class and charging: the ceiling bucket on every
        class, the assured bucket on the lending level and above (classes
        below the lender only get the replenish).  Classes whose mode
        changed are moved between rows, feeds and the wait queue.
        """
        leaf_idx = self._index_of(leaf_name)
        if self._last_selection is None or self._last_selection[0] != leaf_idx:
            raise RuntimeError(f"charge for {leaf_name!r} without matching selection")
        _, level, prio = self._last_selection
        self._last_selection = None

        cls = self.classes[leaf_idx]
        cls.backlog -= 1
        self.total_backlog -= 1

        cls.deficit[level] -= packet_bytes
        if cls.deficit[level] < 0:
            cls.deficit[level] += cls.quantum
            if level == 0:
                self.rows[0][prio].advance()
            else:
                self.classes[cls.parent].feed[prio].advance()

        if cls.backlog == 0:
            self._deactivate_prios(cls, cls.prio_activity)
            cls.prio_activity = 0

        charge_u = packet_bytes * UNITS_PER_BYTE
        node: Optional[HtbClass] = cls
        while node is not None:
            dt = min(now - node.last_update, node.mbuffer)
            if node.level >= level:
                node.tokens = min(node.burst_u, node.tokens + node.rate * dt) - charge_u
            else:
                # Borrowing class: credit elapsed time, the lender pays.
                node.tokens = min(node.burst_u, node.tokens + node.rate * dt)
            node.ctokens = min(node.cburst_u, node.ctokens + node.ceil * dt) - charge_u
            node.last_update = now

            old_mode = node.mode
            new_mode = _mode_from_buckets(node.tokens, node.ctokens)
            if new_mode != old_mode:
                self._change_mode(node, new_mode)
                if old_mode != ClassMode.CAN_SEND:
                    node.wait_gen += 1      # drop the obsolete wait entry
                if new_mode != ClassMode.CAN_SEND:
                    self._add_wait(node, now, self._wake_delay(node))
            node = self.classes[node.parent] if node.parent is not None else None

    # -- mode bookkeeping ---------------------------------------------------

    def _mode_probe(self, cls: HtbClass, now: int) -> tuple[ClassMode, int]:
        """Mode at ``now`` from virtually replenished buckets, plus the
        remaining delay until the binding bucket reaches zero."""
        dt = min(now - cls.last_update, cls.mbuffer)
        ctok = cls.ctokens + cls.ceil * dt
        if ctok < 0:
            delay = _ceil_div(-ctok, cls.ceil) if cls.ceil > 0 else cls.mbuffer
            return ClassMode.CANT_SEND, min(delay, cls.mbuffer)
        tok = cls.tokens + cls.rate * dt
        if tok >= 0:
            return ClassMode.CAN_SEND, 0
        delay = _ceil_div(-tok, cls.rate) if cls.rate > 0 else cls.mbuffer
        return ClassMode.MAY_BORROW, min(delay, cls.mbuffer)

    def _wake_delay(self, cls: HtbClass) -> int:
        if cls.mode == ClassMode.CANT_SEND:
            return min(_ceil_div(-cls.ctokens, cls.ceil) if cls.ceil > 0 else cls.mbuffer,
                       cls.mbuffer)
        return min(_ceil_div(-cls.tokens, cls.rate) if cls.rate > 0 else cls.mbuffer,
                   cls.mbuffer)

    def _add_wait(self, cls: HtbClass, now: int, delay: int) -> None:
        cls.wait_gen += 1
        heapq.heappush(self.wait_pq[cls.level], (now + max(1, delay), cls.index, cls.wait_gen))

    def _do_events(self, level: int, now: int) -> None:
        """Process due wake-ups: revalidate modes against virtual buckets."""
        heap = self.wait_pq[level]
        while heap:
            t, idx, gen = heap[0]
            cls = self.classes[idx]
            if gen != cls.wait_gen:
                heapq.heappop(heap)
                continue
            if t > now:
                return
            heapq.heappop(heap)
            cls.wait_gen += 1
            new_mode, delay = self._mode_probe(cls, now)
            if new_mode != cls.mode:
                self._change_mode(cls, new_mode)
            if cls.mode != ClassMode.CAN_SEND:
                self._add_wait(cls, now, delay)

    def _change_mode(self, cls: HtbClass, new_mode: ClassMode) -> None:
        if new_mode == cls.mode:
            return
        if cls.prio_activity:
            if cls.mode != ClassMode.CANT_SEND:
                self._deactivate_prios(cls, cls.prio_activity)
            cls.mode = new_mode
            if new_mode != ClassMode.CANT_SEND:
                self._activate_prios(cls, cls.prio_activity)
        else:
            cls.mode = new_mode

    def _activate_prios(self, cls: HtbClass, mask: int) -> None:
        # Walk up through MAY_BORROW classes hooking into parent feeds; a
        # CAN_SEND top of the chain lands in its level's row.  A CANT_SEND
        # top leaves the chain dangling until its wake fires.
        node = cls
        parent = self.classes[node.parent] if node.parent is not None else None
        while node.mode == ClassMode.MAY_BORROW and parent is not None and mask:
            m = mask
            prio = 0
            while m:
                if m & 1:
                    feed = parent.feed[prio]
                    if feed.ids:
                        mask &= ~(1 << prio)   # parent already fed at this prio
                    feed.insert(node.index)
                m >>= 1
                prio += 1
            parent.prio_activity |= mask
            node = parent
            parent = self.classes[node.parent] if node.parent is not None else None
        if node.mode == ClassMode.CAN_SEND and mask:
            row = self.rows[node.level]
            prio = 0
            m = mask
            while m:
                if m & 1:
                    row[prio].insert(node.index)
                m >>= 1
                prio += 1

    def _deactivate_prios(self, cls: HtbClass, mask: int) -> None:
        node = cls
        parent = self.classes[node.parent] if node.parent is not None else None
        while node.mode == ClassMode.MAY_BORROW and parent is not None and mask:
            m = mask
            mask = 0
            prio = 0
            while m:
                if m & 1:
                    feed = parent.feed[prio]
                    feed.remove(node.index)
                    if not feed.ids:
                        mask |= 1 << prio      # feed emptied: propagate up
                m >>= 1
                prio += 1
            parent.prio_activity &= ~mask
            node = parent
            parent = self.classes[node.parent] if node.parent is not None else None
        if node.mode == ClassMode.CAN_SEND and mask:
            row = self.rows[node.level]
            prio = 0
            m = mask
            while m:
                if m & 1:
                    feed = row[prio]
                    if feed.ptr == node.index:
                        feed.advance()
                    feed.remove(node.index)
                m >>= 1
                prio += 1


def build_tree(configs: list[HtbClassConfig], link_rate: int) -> HtbTree:
    """Validate a hierarchy and return a fresh tree with full buckets.

    Levels are recomputed from the structure (leaves at 0, each parent one
    above its tallest child); the declared ``level`` fields are only checked
    for root/leaf placement.
    """
    if not configs:
        raise TreeConfigError("hierarchy is empty")

    name_index: dict[str, int] = {}
    for i, cfg in enumerate(configs):
        if cfg.name in name_index:
            raise TreeConfigError(f"duplicate class name {cfg.name!r}")
        name_index[cfg.name] = i

    classes = [HtbClass(cfg, i) for i, cfg in enumerate(configs)]
    roots = []
    for cls in classes:
        cfg = cls.cfg
        if cfg.rate < 0 or cfg.ceil < 0:
            raise TreeConfigError(f"{cfg.name}: negative rate")
        if cfg.ceil < cfg.rate:
            raise TreeConfigError(f"{cfg.name}: ceiling below assured rate")
        if cfg.priority is not None and not 0 <= cfg.priority < NUM_PRIOS:
            raise TreeConfigError(f"{cfg.name}: priority out of 0..7")
        if cls.quantum <= 0:
            raise TreeConfigError(f"{cfg.name}: quantum must be positive")
        if cfg.parent is None:
            roots.append(cls)
        else:
            if cfg.parent not in name_index:
                raise TreeConfigError(f"{cfg.name}: orphan class, unknown parent {cfg.parent!r}")
            cls.parent = name_index[cfg.parent]
            classes[cls.parent].children.append(cls.index)
    if len(roots) != 1:
        raise TreeConfigError(f"expected exactly one root class, found {len(roots)}")
    root = roots[0]

    # Reachability doubles as the cycle check.
    seen: set[int] = set()
    order = [root.index]
    while order and len(seen) < len(classes) + 1:
        idx = order.pop()
        if idx in seen:
            raise TreeConfigError("cycle in class hierarchy")
        seen.add(idx)
        order.extend(classes[idx].children)
    if len(seen) != len(classes):
        unreachable = sorted(c.name for c in classes if c.index not in seen)
        raise TreeConfigError(f"cycle or unreachable classes: {', '.join(unreachable)}")

    for cls in classes:
        if cls.children:
            child_sum = sum(classes[i].rate for i in cls.children)
            if child_sum > cls.rate:
                raise TreeConfigError(
                    f"{cls.name}: children assured exceeds parent "
                    f"({child_sum} > {cls.rate} bps)")

    def depth_level(idx: int) -> int:
        cls = classes[idx]
        if not cls.children:
            return 0
        return 1 + max(depth_level(i) for i in cls.children)

    for cls in classes:
        cls.level = depth_level(cls.index)
        if cls.is_leaf and cls.cfg.level != 0:
            raise TreeConfigError(f"{cls.name}: leaf classes must declare level 0")
    declared_max = max(c.cfg.level for c in classes)
    if root.cfg.level != declared_max:
        raise TreeConfigError(
            f"{root.name}: root must declare the maximum level ({declared_max})")

    num_levels = root.level + 1
    for cls in classes:
        if cls.is_leaf:
            cls.deficit = [0] * num_levels
        else:
            cls.feed = [_Feed() for _ in range(NUM_PRIOS)]

    if root.rate != root.ceil:
        log.warning("root class %s: assured %d != ceiling %d", root.name, root.rate, root.ceil)
    if root.rate != link_rate:
        log.warning("root class %s: assured rate %d differs from link rate %d",
                    root.name, root.rate, link_rate)

    return HtbTree(classes, name_index, root.index, num_levels)
