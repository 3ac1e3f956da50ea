"""Per-hop trace records, one tab-separated line each.

Column order: time, event, node, interface, link, src>dst, flags, seq, ack,
payload length, option kinds, disposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from ..wire import Envelope

COLUMNS = ("time", "event", "node", "interface", "link", "addresses", "flags", "seq",
           "ack", "length", "options", "disposition")


class Disposition(Enum):
    ENQUEUED = "ENQUEUED"
    DELIVERED = "DELIVERED"
    LOST_RANDOM = "LOST_RANDOM"
    LOST_OVERFLOW = "LOST_OVERFLOW"
    DROPPED_NO_ROUTE = "DROPPED_NO_ROUTE"


TERMINAL = frozenset({Disposition.DELIVERED, Disposition.LOST_RANDOM,
                      Disposition.LOST_OVERFLOW, Disposition.DROPPED_NO_ROUTE})


@dataclass(frozen=True, slots=True)
class TraceRecord:
    time: float
    event: str
    node: str
    interface: str
    link: str
    envelope: Envelope
    disposition: Disposition

    @property
    def flags(self):
        return self.envelope.segment.flags

    def to_line(self) -> str:
        seg = self.envelope.segment
        opts = ",".join(f"{o.kind:02x}" for o in seg.options) or "-"
        return "\t".join((
            f"{self.time:.9f}", self.event, self.node, self.interface, self.link or "-",
            f"{self.envelope.src_addr}>{self.envelope.dst_addr}", str(seg.flags),
            str(seg.seq), str(seg.ack), str(len(seg.payload)), opts,
            self.disposition.value))


def format_trace(records) -> str:
    return "".join(r.to_line() + "\n" for r in records)
