"""Outputs of the endpoint state machine.

The endpoint never performs I/O itself; every input returns a list of these
and the driver (the simulator or a test) carries them out.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

from ..wire import Envelope

if TYPE_CHECKING:
    from .connection import Connection


class ConnEvent(Enum):
    ESTABLISHED = "ESTABLISHED"
    PEER_CLOSED = "PEER_CLOSED"
    CLOSED = "CLOSED"
    RESET = "RESET"


class TimerKind(Enum):
    RTO = "rto"
    TIME_WAIT = "time_wait"
    DELAYED_ACK = "delayed_ack"
    PERSIST = "persist"


@dataclass(slots=True)
class Emit:
    interface_id: str
    envelope: Envelope


@dataclass(slots=True)
class Deliver:
    conn: "Connection"
    data: bytes


@dataclass(slots=True)
class Signal:
    conn: "Connection"
    event: ConnEvent


@dataclass(slots=True)
class ArmTimer:
    conn: "Connection"
    kind: TimerKind
    deadline: float


Action = Any  # Emit | Deliver | Signal | ArmTimer
