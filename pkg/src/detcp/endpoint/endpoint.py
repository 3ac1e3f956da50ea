"""A host running decoupled TCP: connection tables, demultiplexing, egress."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import Optional, Union

from ..wire import Envelope, Segment, SegmentFlags, SegmentOption, SEQ_MASK
from .actions import Emit
from .config import EndpointConfig, EndpointError, Interface, SixTuple
from .connection import ConnParams, Connection
from .states import ConnState, StateEvent


@dataclass
class Listener:
    port: int
    state: ConnState = ConnState.LISTEN
    accepted: list[Connection] = field(default_factory=list)


@dataclass(frozen=True)
class Match:
    """Result of demultiplexing: the target and which lookup step found it.

    Steps: 1 connection id, 2 four-tuple, 3 peer's complementary address,
    4 listener.
    """

    target: Union[Connection, Listener]
    step: int


@dataclass(frozen=True)
class TransitionRecord:
    time: float
    conn_id: Optional[int]
    before: ConnState
    after: ConnState
    event: StateEvent


class Endpoint:
    """Pure state machine for one host; every input returns a list of actions.

    ``use_conn_id`` controls whether actively opened connections carry the
    CONNECTION_ID option. ``tuple_fallback`` enables demultiplexing on the
    peer's sending address when the classic four-tuple does not match.
    """

    def __init__(self, name: str, config: EndpointConfig, seed: int = 0,
                 params: Optional[ConnParams] = None, use_conn_id: bool = True,
                 tuple_fallback: bool = True, iss: Optional[int] = None):
        self.name = name
        self.config = config
        self.params = params or ConnParams()
        self.use_conn_id = use_conn_id
        self.tuple_fallback = tuple_fallback
        self.fixed_iss = iss
        self.rng = random.Random(seed)

        self.connections: list[Connection] = []
        self.finished: list[Connection] = []
        self.listeners: dict[int, Listener] = {}
        self.by_id: dict[int, Connection] = {}
        self.by_four: dict[tuple, Connection] = {}
        self.by_in: dict[tuple, Connection] = {}
        self.by_comp: dict[tuple, Connection] = {}
        self._keys: dict[int, tuple] = {}
        self.stats: Counter = Counter()
        self.transition_log: list[TransitionRecord] = []

    def __repr__(self) -> str:
        return f"<Endpoint {self.name} {self.config.original_addr}>"

    # -- bookkeeping -------------------------------------------------------

    def _record_transition(self, conn: Optional[Connection], before: ConnState,
                           after: ConnState, event: StateEvent, now: float) -> None:
        cid = conn.conn_id if conn is not None else None
        self.transition_log.append(TransitionRecord(now, cid, before, after, event))

    def _record_emit(self, conn: Optional[Connection], iface: str, env: Envelope) -> None:
        self.stats["segments_out"] += 1
        if env.segment.flags & SegmentFlags.RST:
            self.stats["rst_sent"] += 1

    def _index(self, conn: Connection) -> None:
        t = conn.six_tuple
        four = t.four_tuple
        inbound = (t.local_receive, t.src_port, t.remote_send, t.dst_port)
        comp = (t.remote_send, t.src_port, t.dst_port)
        self.by_four[four] = conn
        self.by_in[inbound] = conn
        self.by_comp[comp] = conn
        if conn.conn_id is not None:
            self.by_id[conn.conn_id] = conn
        self._keys[id(conn)] = (four, inbound, comp)

    def _unindex(self, conn: Connection) -> None:
        keys = self._keys.pop(id(conn), None)
        if keys is None:
            return
        four, inbound, comp = keys
        if self.by_four.get(four) is conn:
            del self.by_four[four]
        if self.by_in.get(inbound) is conn:
            del self.by_in[inbound]
        if self.by_comp.get(comp) is conn:
            del self.by_comp[comp]
        if conn.conn_id is not None and self.by_id.get(conn.conn_id) is conn:
            del self.by_id[conn.conn_id]

    def _reindex(self, conn: Connection) -> None:
        self._unindex(conn)
        self._index(conn)

    def _release(self, conn: Connection) -> None:
        self._unindex(conn)
        if conn in self.connections:
            self.connections.remove(conn)
            self.finished.append(conn)

    def _new_iss(self) -> int:
        return self.fixed_iss if self.fixed_iss is not None else self.rng.getrandbits(32)

    # -- egress --------------------------------------------------------------

    def _send_interface(self) -> Interface:
        iface = self.config.interface_for(self.config.original_addr)
        if iface is None or not iface.role.can_send:
            raise EndpointError("NO_SEND_INTERFACE",
                                f"{self.name} cannot send from {self.config.original_addr}")
        return iface

    def select_egress_interface(self, conn: Optional[Connection],
                                kind: SegmentFlags = SegmentFlags.ACK) -> str:
        """Every segment kind leaves through the interface owning the original address."""
        return self._send_interface().interface_id

    # -- application calls -----------------------------------------------------

    def open_active(self, local_port: int, remote_addr, remote_port: int,
                    now: float) -> tuple[Connection, list]:
        self._send_interface()
        cfg = self.config
        t = SixTuple(orig_src=cfg.original_addr, comp_src=cfg.complementary_addr,
                     src_port=local_port, orig_dst=IPv4Address(remote_addr), comp_dst=None,
                     dst_port=remote_port)
        if t.four_tuple in self.by_four:
            raise EndpointError("PORT_IN_USE", f"{t.four_tuple} already connected")
        conn_id = self.rng.getrandbits(64) if self.use_conn_id else None
        conn = Connection(self, t, conn_id, self._new_iss(), self.params)
        self.connections.append(conn)
        self._index(conn)
        actions: list = []
        conn.start_active(now, actions)
        return conn, actions

    def open_passive(self, port: int, now: float = 0.0) -> Listener:
        if port in self.listeners:
            raise EndpointError("PORT_IN_USE", f"already listening on {port}")
        listener = Listener(port)
        self.listeners[port] = listener
        self._record_transition(None, ConnState.CLOSED, ConnState.LISTEN,
                                StateEvent.PASSIVE_OPEN, now)
        return listener

    def send_data(self, conn: Connection, data: bytes, now: float) -> list:
        actions: list = []
        conn.send(data, now, actions)
        return actions

    def close_connection(self, conn: Connection, now: float) -> list:
        actions: list = []
        if conn.state is ConnState.CLOSED:
            raise EndpointError("ALREADY_CLOSING", "connection is CLOSED")
        conn.close(now, actions)
        return actions

    # -- network input -----------------------------------------------------------

    def demultiplex(self, env: Envelope) -> Optional[Match]:
        seg = env.segment
        sport, dport = seg.source_port, seg.dest_port
        # Exact match: arrives at our receiving address from the peer's
        # sending address. For coupled connections this is the four-tuple.
        by_tuple = self.by_in.get((env.dst_addr, dport, env.src_addr, sport))
        step = 2
        if by_tuple is None and self.tuple_fallback:
            cand = self.by_comp.get((env.src_addr, dport, sport))
            if cand is not None and env.dst_addr in self.config.addresses:
                by_tuple, step = cand, 3

        cid = seg.conn_id
        if cid is not None:
            by_id = self.by_id.get(cid)
            if by_id is not None and by_id.local_port == dport and by_id.remote_port == sport:
                if by_tuple is not None and by_tuple is not by_id:
                    self.stats["demux_conflicts"] += 1
                return Match(by_id, 1)

        if by_tuple is not None:
            return Match(by_tuple, step)
        if seg.flags & SegmentFlags.SYN and not seg.flags & SegmentFlags.ACK:
            listener = self.listeners.get(dport)
            if listener is not None:
                return Match(listener, 4)
        return None

    def on_segment(self, interface_id: str, env: Envelope, now: float) -> list:
        actions: list = []
        try:
            iface = self.config.interface(interface_id)
        except KeyError:
            self.stats["unknown_interface"] += 1
            return actions
        if not iface.role.can_receive:
            self.stats["wrong_direction"] += 1
            return actions
        self.stats["segments_in"] += 1
        match = self.demultiplex(env)
        if match is None:
            self.stats["not_found"] += 1
            if not env.segment.flags & SegmentFlags.RST:
                self._send_rst(env, actions)
            return actions
        self.stats[f"demux_step_{match.step}"] += 1
        target = match.target
        if isinstance(target, Listener):
            self._accept(target, env, now, actions)
        else:
            target.on_segment(env, now, actions)
        return actions

    def _accept(self, listener: Listener, env: Envelope, now: float, actions: list) -> None:
        seg = env.segment
        cfg = self.config
        t = SixTuple(orig_src=cfg.original_addr, comp_src=cfg.complementary_addr,
                     src_port=seg.dest_port, orig_dst=env.src_addr, comp_dst=None,
                     dst_port=seg.source_port)
        conn = Connection(self, t, seg.conn_id, self._new_iss(), self.params)
        self.connections.append(conn)
        listener.accepted.append(conn)
        conn.start_passive(env, now, actions)

    def _send_rst(self, env: Envelope, actions: list) -> None:
        seg = env.segment
        opts = ()
        if seg.conn_id is not None:
            opts = (SegmentOption.connection_id(seg.conn_id),)
        if seg.flags & SegmentFlags.ACK:
            rst = Segment(SegmentFlags.RST, seg.dest_port, seg.source_port, seq=seg.ack,
                          options=opts)
        else:
            rst = Segment(SegmentFlags.RST | SegmentFlags.ACK, seg.dest_port, seg.source_port,
                          seq=0, ack=(seg.seq + seg.seq_len) & SEQ_MASK, options=opts)
        try:
            iface = self.select_egress_interface(None, rst.flags)
        except EndpointError:
            self.stats["rst_suppressed"] += 1
            return
        # A SYN names the address its sender receives on; anything else can
        # only be answered at its source address.
        dest = seg.complementary_addr or env.src_addr
        out = Envelope(self.config.original_addr, dest, rst)
        actions.append(Emit(iface, out))
        self._record_emit(None, iface, out)

    # -- timers ----------------------------------------------------------------

    def next_deadline(self) -> Optional[float]:
        best = None
        for conn in self.connections:
            d = conn.next_deadline()
            if d is not None and (best is None or d < best):
                best = d
        return best

    def on_tick(self, now: float) -> list:
        actions: list = []
        for conn in list(self.connections):
            d = conn.next_deadline()
            if d is not None and d <= now:
                conn.on_tick(now, actions)
        return actions
