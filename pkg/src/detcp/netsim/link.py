"""Runtime state of one simplex link: FIFO queue, serializer, loss stream."""

from __future__ import annotations

import hashlib
import random
from collections import deque
from dataclasses import dataclass

from .topology import LinkSpec


def derive_seed(master_seed: int, name: str) -> int:
    """Stable per-component seed, independent of every other component's name."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class LinkCounters:
    injected: int = 0
    delivered: int = 0
    lost_random: int = 0
    lost_overflow: int = 0
    bytes_delivered: int = 0
    max_queue: int = 0


class SimplexLink:
    """Store-and-forward link; ``queue`` holds waiting packets plus the one serializing."""

    def __init__(self, spec: LinkSpec, master_seed: int, loss: float | None = None):
        self.spec = spec
        self.loss = spec.loss if loss is None else loss
        self.rng = random.Random(derive_seed(master_seed, spec.link_id))
        self.queue: deque = deque()
        self.propagating = 0
        self.counters = LinkCounters()

    @property
    def link_id(self) -> str:
        return self.spec.link_id

    @property
    def in_flight(self) -> int:
        return len(self.queue) + self.propagating

    def offer(self, item) -> bool:
        """Enqueue ``item`` unless the queue is full; False means an overflow drop."""
        c = self.counters
        c.injected += 1
        if len(self.queue) >= self.spec.queue_cap:
            c.lost_overflow += 1
            return False
        self.queue.append(item)
        if len(self.queue) > c.max_queue:
            c.max_queue = len(self.queue)
        return True

    def finish_head(self):
        """Serialization of the head packet completed; returns (item, lost)."""
        item = self.queue.popleft()
        lost = self.rng.random() < self.loss
        if lost:
            self.counters.lost_random += 1
        else:
            self.propagating += 1
        return item, lost

    def arrived(self, octets: int) -> None:
        self.propagating -= 1
        self.counters.delivered += 1
        self.counters.bytes_delivered += octets

    def conserved(self) -> bool:
        c = self.counters
        return c.injected == c.delivered + c.lost_random + c.lost_overflow + self.in_flight
