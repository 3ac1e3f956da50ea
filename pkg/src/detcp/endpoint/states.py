"""Connection states and the transition graph.

Decoupling changes where segments leave and how they are matched on arrival;
the graph itself is the classic TCP one, plus RST aborts to CLOSED from every
state that has a peer.
"""

from enum import Enum
from typing import Optional


class ConnState(Enum):
    CLOSED = "CLOSED"
    LISTEN = "LISTEN"
    SYN_SENT = "SYN_SENT"
    SYN_RCVD = "SYN_RCVD"
    ESTABLISHED = "ESTABLISHED"
    FIN_WAIT_1 = "FIN_WAIT_1"
    FIN_WAIT_2 = "FIN_WAIT_2"
    CLOSING = "CLOSING"
    CLOSE_WAIT = "CLOSE_WAIT"
    LAST_ACK = "LAST_ACK"
    TIME_WAIT = "TIME_WAIT"


class StateEvent(Enum):
    PASSIVE_OPEN = "passive_open"
    ACTIVE_OPEN = "active_open"
    CLOSE = "close"
    RCV_SYN = "rcv_syn"
    RCV_SYN_ACK = "rcv_syn_ack"
    RCV_ACK = "rcv_ack"              # acknowledges our SYN
    RCV_FIN = "rcv_fin"
    RCV_ACK_OF_FIN = "rcv_ack_of_fin"
    RCV_FIN_ACK = "rcv_fin_ack"      # FIN that also acknowledges our FIN
    RCV_RST = "rcv_rst"
    TIMEOUT = "timeout"              # 2*MSL expiry
    ABORT = "abort"                  # local give-up, e.g. SYN retries exhausted


S, E = ConnState, StateEvent

TRANSITIONS: dict[tuple[ConnState, StateEvent], ConnState] = {
    (S.CLOSED, E.PASSIVE_OPEN): S.LISTEN,
    (S.CLOSED, E.ACTIVE_OPEN): S.SYN_SENT,
    (S.LISTEN, E.RCV_SYN): S.SYN_RCVD,
    (S.LISTEN, E.CLOSE): S.CLOSED,
    (S.SYN_SENT, E.RCV_SYN_ACK): S.ESTABLISHED,
    (S.SYN_SENT, E.RCV_SYN): S.SYN_RCVD,
    (S.SYN_SENT, E.CLOSE): S.CLOSED,
    (S.SYN_RCVD, E.RCV_ACK): S.ESTABLISHED,
    (S.SYN_RCVD, E.CLOSE): S.FIN_WAIT_1,
    (S.ESTABLISHED, E.CLOSE): S.FIN_WAIT_1,
    (S.ESTABLISHED, E.RCV_FIN): S.CLOSE_WAIT,
    (S.FIN_WAIT_1, E.RCV_ACK_OF_FIN): S.FIN_WAIT_2,
    (S.FIN_WAIT_1, E.RCV_FIN): S.CLOSING,
    (S.FIN_WAIT_1, E.RCV_FIN_ACK): S.TIME_WAIT,
    (S.FIN_WAIT_2, E.RCV_FIN): S.TIME_WAIT,
    (S.CLOSING, E.RCV_ACK_OF_FIN): S.TIME_WAIT,
    (S.CLOSE_WAIT, E.CLOSE): S.LAST_ACK,
    (S.LAST_ACK, E.RCV_ACK_OF_FIN): S.CLOSED,
    (S.TIME_WAIT, E.TIMEOUT): S.CLOSED,
}
for _state in (S.SYN_SENT, S.SYN_RCVD, S.ESTABLISHED, S.FIN_WAIT_1, S.FIN_WAIT_2,
               S.CLOSING, S.CLOSE_WAIT, S.LAST_ACK):
    TRANSITIONS[(_state, E.RCV_RST)] = S.CLOSED
    TRANSITIONS[(_state, E.ABORT)] = S.CLOSED

# The classic diagram's edge set; every table entry must be one of these.
STANDARD_EDGES: frozenset[tuple[ConnState, ConnState]] = frozenset({
    (S.CLOSED, S.LISTEN), (S.CLOSED, S.SYN_SENT),
    (S.LISTEN, S.SYN_RCVD), (S.LISTEN, S.CLOSED),
    (S.SYN_SENT, S.ESTABLISHED), (S.SYN_SENT, S.SYN_RCVD), (S.SYN_SENT, S.CLOSED),
    (S.SYN_RCVD, S.ESTABLISHED), (S.SYN_RCVD, S.FIN_WAIT_1), (S.SYN_RCVD, S.CLOSED),
    (S.ESTABLISHED, S.FIN_WAIT_1), (S.ESTABLISHED, S.CLOSE_WAIT), (S.ESTABLISHED, S.CLOSED),
    (S.FIN_WAIT_1, S.FIN_WAIT_2), (S.FIN_WAIT_1, S.CLOSING), (S.FIN_WAIT_1, S.TIME_WAIT),
    (S.FIN_WAIT_1, S.CLOSED),
    (S.FIN_WAIT_2, S.TIME_WAIT), (S.FIN_WAIT_2, S.CLOSED),
    (S.CLOSING, S.TIME_WAIT), (S.CLOSING, S.CLOSED),
    (S.CLOSE_WAIT, S.LAST_ACK), (S.CLOSE_WAIT, S.CLOSED),
    (S.LAST_ACK, S.CLOSED),
    (S.TIME_WAIT, S.CLOSED),
})


def next_state(state: ConnState, event: StateEvent) -> Optional[ConnState]:
    """Successor of ``state`` under ``event``, or None if the event is not an edge."""
    return TRANSITIONS.get((state, event))
