"""Per-leaf FIFO packet storage with bounded capacity."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True, slots=True)
class Packet:
    """A simulated packet; ``size`` is the physical-layer size in bytes."""

    flow_id: int
    size: int
    created_at: int          # nanoseconds
    sequence: int


class LeafQueue:
    """Bounded FIFO for one leaf class.

    ``offered`` counts every push attempt so that
    ``offered == pops + drops + len(queue)`` holds at any time.
    """

    __slots__ = ("leaf_id", "capacity", "packets", "drops", "offered", "pops")

    def __init__(self, leaf_id: str, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError("queue capacity must be positive")
        self.leaf_id = leaf_id
        self.capacity = capacity
        self.packets: deque[Packet] = deque()
        self.drops = 0
        self.offered = 0
        self.pops = 0

    def __len__(self) -> int:
        return len(self.packets)

    def push(self, packet: Packet) -> bool:
        """Append preserving FIFO order; a full queue drops and counts."""
        self.offered += 1
        if len(self.packets) >= self.capacity:
            self.drops += 1
            return False
        self.packets.append(packet)
        return True

    def pop(self) -> Packet:
        """Remove and return the head; popping an empty queue is a scheduler bug."""
        if not self.packets:
            raise IndexError(f"pop from empty queue {self.leaf_id!r}")
        self.pops += 1
        return self.packets.popleft()

    def head(self) -> Optional[Packet]:
        return self.packets[0] if self.packets else None
