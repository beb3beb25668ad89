"""Flow classification: map arriving packets to leaf classes.

Filters are ordered and the first match wins.  A filter matches on the flow
id and, optionally, on source/destination endpoint labels carried by the
packet's flow.  Unmatched packets are dropped and counted rather than routed
to a default class, so configuration gaps surface immediately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import HtbTree
from .queues import LeafQueue, Packet

NO_MATCH = None


@dataclass(frozen=True)
class FlowFilter:
    """Predicate over packet metadata directing a flow to a leaf class.

    ``None`` fields are wildcards; a filter with all fields ``None``
    matches everything.
    """

    target_leaf: str
    flow_id: Optional[int] = None
    src: Optional[str] = None
    dst: Optional[str] = None

    def matches(self, flow_id: int, src: Optional[str] = None,
                dst: Optional[str] = None) -> bool:
        if self.flow_id is not None and self.flow_id != flow_id:
            return False
        if self.src is not None and self.src != src:
            return False
        if self.dst is not None and self.dst != dst:
            return False
        return True


def classify(filters: list[FlowFilter], packet) -> Optional[str]:
    """Return the target leaf of the first matching filter, or ``None``.

    ``packet`` needs a ``flow_id`` attribute; ``src``/``dst`` labels are
    honoured when present.
    """
    flow_id = packet.flow_id
    src = getattr(packet, "src", None)
    dst = getattr(packet, "dst", None)
    for f in filters:
        if f.matches(flow_id, src, dst):
            return f.target_leaf
    return NO_MATCH


@dataclass(frozen=True)
class Enqueued:
    leaf: str


@dataclass(frozen=True)
class Dropped:
    reason: str                 # "NoFilter" or "QueueFull"


def admit(tree: HtbTree, queues: dict[str, LeafQueue], filters: list[FlowFilter],
          packet: Packet, now: int):
    """Classify, enqueue and notify the scheduler for one packet.

    Returns :class:`Enqueued` or :class:`Dropped`; exactly one scheduler
    notification happens per enqueued packet and none for drops.
    """
    leaf = classify(filters, packet)
    if leaf is NO_MATCH:
        return Dropped("NoFilter")
    if not queues[leaf].push(packet):
        return Dropped("QueueFull")
    tree.enqueue_notify(leaf, now)
    return Enqueued(leaf)
