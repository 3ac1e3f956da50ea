"""One decoupled-TCP connection: handshake, data transfer, teardown."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from ..wire import Envelope, Segment, SegmentFlags, SegmentOption, WINDOW_SCALE
from .actions import ArmTimer, ConnEvent, Deliver, Emit, Signal, TimerKind
from .config import EndpointError, SixTuple
from .reliability import Arrival, Reassembly, RttEstimator, Sender
from .seqspace import SEQ_MASK, unwrap
from .states import ConnState, StateEvent, next_state

if TYPE_CHECKING:
    from .endpoint import Endpoint

SYN, ACK, FIN, RST = SegmentFlags.SYN, SegmentFlags.ACK, SegmentFlags.FIN, SegmentFlags.RST
MAX_SYN_RETRIES = 6
SENDING_STATES = frozenset({ConnState.ESTABLISHED, ConnState.CLOSE_WAIT, ConnState.FIN_WAIT_1,
                            ConnState.CLOSING, ConnState.LAST_ACK})
RECEIVING_STATES = frozenset({ConnState.ESTABLISHED, ConnState.FIN_WAIT_1, ConnState.FIN_WAIT_2})


@dataclass
class ConnParams:
    mss: int = 1000
    send_window: int = 64 * 1024
    recv_buffer: int = 1 << 20
    send_buffer: int = 4 << 20
    delayed_ack: float = 0.05
    msl: float = 5.0
    initial_rto: float = 1.0
    min_rto: float = 0.2
    max_rto: float = 60.0
    aimd: bool = False


@dataclass(frozen=True)
class Transition:
    time: float
    before: ConnState
    after: ConnState
    event: StateEvent


class Connection:
    def __init__(self, endpoint: "Endpoint", six_tuple: SixTuple, conn_id: Optional[int],
                 iss: int, params: ConnParams):
        self.endpoint = endpoint
        self.six_tuple = six_tuple
        self.conn_id = conn_id
        self.params = params
        self.state = ConnState.CLOSED
        self.transitions: list[Transition] = []

        self.iss = iss
        self.irs: Optional[int] = None
        self.sender = Sender(iss + 1, params.mss, params.send_window, params.send_buffer,
                             aimd=params.aimd)
        self.receiver: Optional[Reassembly] = None
        self.rtt = RttEstimator(params.initial_rto, params.min_rto, params.max_rto)

        self.syn_acked = False
        self.syn_sent_at = 0.0
        self.syn_retries = 0
        self.ack_pending = 0

        self.rto_at: Optional[float] = None
        self.probe_due = False        # the armed RTO deadline is a tail probe
        self.probe_sent = False
        self.dack_at: Optional[float] = None
        self.persist_at: Optional[float] = None
        self.time_wait_at: Optional[float] = None

        self.bytes_delivered = 0
        self.first_data_at: Optional[float] = None
        self.last_deliver_at: Optional[float] = None
        self.acks_sent = 0
        self._id_opt = (SegmentOption.connection_id(conn_id),) if conn_id is not None else ()
        self._window_raw = min(0xFFFF, params.recv_buffer // WINDOW_SCALE)

    def __repr__(self) -> str:
        t = self.six_tuple
        return (f"<Connection {t.orig_src}:{t.src_port}->{t.orig_dst}:{t.dst_port} "
                f"{self.state.name}>")

    @property
    def local_port(self) -> int:
        return self.six_tuple.src_port

    @property
    def remote_port(self) -> int:
        return self.six_tuple.dst_port

    @property
    def retransmissions(self) -> int:
        return self.sender.retransmissions

    @property
    def send_space(self) -> int:
        return self.sender.space

    # -- state bookkeeping ----------------------------------------------

    def _transition(self, event: StateEvent, now: float) -> None:
        after = next_state(self.state, event)
        if after is None:
            raise RuntimeError(f"no edge from {self.state.name} on {event.value}")
        self.transitions.append(Transition(now, self.state, after, event))
        self.endpoint._record_transition(self, self.state, after, event, now)
        self.state = after

    def _closed(self, now: float, actions: list, event: ConnEvent) -> None:
        self.rto_at = self.dack_at = self.persist_at = self.time_wait_at = None
        actions.append(Signal(self, event))
        self.endpoint._release(self)

    def _arm(self, kind: TimerKind, deadline: float, actions: list) -> None:
        if kind is TimerKind.RTO:
            self.rto_at = deadline
        elif kind is TimerKind.DELAYED_ACK:
            self.dack_at = deadline
        elif kind is TimerKind.PERSIST:
            self.persist_at = deadline
        else:
            self.time_wait_at = deadline
        actions.append(ArmTimer(self, kind, deadline))

    def next_deadline(self) -> Optional[float]:
        times = [t for t in (self.rto_at, self.dack_at, self.persist_at, self.time_wait_at)
                 if t is not None]
        return min(times) if times else None

    # -- segment construction -------------------------------------------

    def _emit(self, flags: SegmentFlags, seq: int, actions: list, payload: bytes = b"",
              extra: tuple = ()) -> Segment:
        rcv = self.receiver
        if rcv is not None and not flags & RST:
            flags |= ACK
            ack = rcv.rcv_nxt & SEQ_MASK
            if rcv.blocks:
                sack = SegmentOption.sack_blocks(
                    (left & SEQ_MASK, right & SEQ_MASK) for left, right in rcv.sack_blocks())
                extra = extra + (sack,)
        else:
            ack = 0
        seg = Segment(flags, self.six_tuple.src_port, self.six_tuple.dst_port,
                      seq & SEQ_MASK, ack, self._window_raw, extra + self._id_opt, payload)
        iface = self.endpoint.select_egress_interface(self, flags)
        env = Envelope(self.six_tuple.orig_src, self.six_tuple.orig_dst, seg)
        actions.append(Emit(iface, env))
        self.endpoint._record_emit(self, iface, env)
        if flags & ACK:
            self.ack_pending = 0
            self.dack_at = None
        return seg

    def _syn_options(self) -> tuple:
        comp = self.endpoint.config.complementary_addr
        return (SegmentOption.complementary_addr(comp),) if comp is not None else ()

    def _send_syn(self, now: float, actions: list) -> None:
        self.syn_sent_at = now
        flags = SYN | ACK if self.receiver is not None else SYN
        self._emit(flags, self.iss, actions, extra=self._syn_options())

    def _send_ack(self, actions: list) -> None:
        self.acks_sent += 1
        self._emit(ACK, self.sender.snd_nxt, actions)

    # -- opening ----------------------------------------------------------

    def start_active(self, now: float, actions: list) -> None:
        self._transition(StateEvent.ACTIVE_OPEN, now)
        self._send_syn(now, actions)
        self._arm(TimerKind.RTO, now + self.rtt.rto, actions)

    def start_passive(self, env: Envelope, now: float, actions: list) -> None:
        """Spawned from a listener by an incoming SYN."""
        self.state = ConnState.LISTEN
        seg = env.segment
        self._learn_peer(env)
        self.irs = seg.seq
        self.receiver = Reassembly(seg.seq + 1, self.params.recv_buffer)
        self.sender.peer_window = seg.window * WINDOW_SCALE
        self._transition(StateEvent.RCV_SYN, now)
        self._send_syn(now, actions)
        self._arm(TimerKind.RTO, now + self.rtt.rto, actions)

    def _learn_peer(self, env: Envelope) -> None:
        """Complete the six-tuple from a SYN or SYN+ACK.

        The peer sends from ``env.src_addr``; it receives on the address in its
        COMPLEMENTARY_ADDR option, or on the sending address when absent.
        """
        t = self.six_tuple
        sender_addr = env.src_addr
        receive_addr = env.segment.complementary_addr or sender_addr
        t.orig_dst = receive_addr
        t.comp_dst = sender_addr if sender_addr != receive_addr else None
        self.endpoint._reindex(self)

    # -- inbound ------------------------------------------------------------

    def on_segment(self, env: Envelope, now: float, actions: list) -> None:
        seg = env.segment
        flags = seg.flags
        state = self.state

        if flags & RST:
            if state is ConnState.TIME_WAIT:
                return  # keep the quiet period; the peer has already gone
            if state is ConnState.SYN_SENT and not (flags & ACK and seg.ack == (self.iss + 1) & SEQ_MASK):
                return
            self._transition(StateEvent.RCV_RST, now)
            self._closed(now, actions, ConnEvent.RESET)
            return

        if state is ConnState.SYN_SENT:
            self._on_syn_sent(env, now, actions)
            return

        if not self.syn_acked:
            if flags & SYN and not flags & ACK:
                self._send_syn(now, actions)
                return
            if not (flags & ACK and seg.ack == (self.iss + 1) & SEQ_MASK):
                return
            self._syn_acknowledged(now)
            if self.state is ConnState.SYN_RCVD:
                self._transition(StateEvent.RCV_ACK, now)
                actions.append(Signal(self, ConnEvent.ESTABLISHED))

        if flags & SYN:
            # Duplicate SYN+ACK: our handshake ACK was lost.
            self._send_ack(actions)
            return

        if flags & ACK:
            self._on_ack(seg, now, actions)
            if self.state is ConnState.CLOSED:
                return

        if seg.payload or flags & FIN:
            self._on_data(seg, now, actions)
            if self.state is ConnState.CLOSED:
                return

        self._pump(now, actions)

    def _on_syn_sent(self, env: Envelope, now: float, actions: list) -> None:
        seg = env.segment
        if not seg.flags & SYN:
            return
        if seg.flags & ACK and seg.ack != (self.iss + 1) & SEQ_MASK:
            return
        self._learn_peer(env)
        self.irs = seg.seq
        self.receiver = Reassembly(seg.seq + 1, self.params.recv_buffer)
        self.sender.peer_window = seg.window * WINDOW_SCALE
        if seg.flags & ACK:
            self._syn_acknowledged(now)
            self._transition(StateEvent.RCV_SYN_ACK, now)
            self._send_ack(actions)
            actions.append(Signal(self, ConnEvent.ESTABLISHED))
        else:
            self._transition(StateEvent.RCV_SYN, now)
            self._send_syn(now, actions)

    def _syn_acknowledged(self, now: float) -> None:
        self.syn_acked = True
        if self.syn_retries == 0:
            self.rtt.observe(now - self.syn_sent_at)
        self.rto_at = None

    def _on_ack(self, seg: Segment, now: float, actions: list) -> None:
        snd = self.sender
        ack = unwrap(seg.ack, snd.snd_una)
        blocks = [(unwrap(left, snd.snd_una), unwrap(right, snd.snd_una)) for left, right in seg.sack]
        pure = not seg.payload and not seg.flags & (SYN | FIN)
        advanced, sample = snd.on_ack(ack, seg.window * WINDOW_SCALE, blocks, pure, now)
        if sample is not None:
            self.rtt.observe(sample)
        if advanced:
            self.probe_sent = False
            if snd.outstanding:
                self._arm_retransmit(now, actions)
            else:
                self.rto_at = None
            if snd.fin_seq is not None and snd.snd_una > snd.fin_seq:
                self._fin_acknowledged(now, actions)

    def _fin_acknowledged(self, now: float, actions: list) -> None:
        state = self.state
        if state is ConnState.FIN_WAIT_1:
            self._transition(StateEvent.RCV_ACK_OF_FIN, now)
        elif state is ConnState.CLOSING:
            self._transition(StateEvent.RCV_ACK_OF_FIN, now)
            self._enter_time_wait(now, actions)
        elif state is ConnState.LAST_ACK:
            self._transition(StateEvent.RCV_ACK_OF_FIN, now)
            self._closed(now, actions, ConnEvent.CLOSED)

    def _enter_time_wait(self, now: float, actions: list) -> None:
        self.rto_at = self.persist_at = None
        self._arm(TimerKind.TIME_WAIT, now + 2 * self.params.msl, actions)

    def _on_data(self, seg: Segment, now: float, actions: list) -> None:
        rcv = self.receiver
        if self.state is ConnState.TIME_WAIT:
            # Retransmitted FIN: our last ACK went missing.
            self._send_ack(actions)
            self._arm(TimerKind.TIME_WAIT, now + 2 * self.params.msl, actions)
            return
        if self.state not in RECEIVING_STATES:
            self._send_ack(actions)
            return
        seq = unwrap(seg.seq, rcv.rcv_nxt)
        data, fin_now, kind = rcv.accept(seq, seg.payload, bool(seg.flags & FIN))
        if data:
            self.bytes_delivered += len(data)
            self.last_deliver_at = now
            actions.append(Deliver(self, data))
        if fin_now:
            state = self.state
            if state is ConnState.ESTABLISHED:
                self._transition(StateEvent.RCV_FIN, now)
            elif state is ConnState.FIN_WAIT_1:
                self._transition(StateEvent.RCV_FIN, now)
            elif state is ConnState.FIN_WAIT_2:
                self._transition(StateEvent.RCV_FIN, now)
                self._enter_time_wait(now, actions)
            self._send_ack(actions)
            actions.append(Signal(self, ConnEvent.PEER_CLOSED))
            return
        if kind is Arrival.IN_ORDER:
            self.ack_pending += 1
            if self.ack_pending >= 2:
                self._send_ack(actions)
            elif self.dack_at is None:
                self._arm(TimerKind.DELAYED_ACK, now + self.params.delayed_ack, actions)
        else:
            self._send_ack(actions)

    # -- outbound -----------------------------------------------------------

    def _pump(self, now: float, actions: list) -> None:
        if self.state not in SENDING_STATES or not self.syn_acked:
            return
        snd = self.sender
        for s in snd.poll(now):
            flags = FIN if s.fin else SegmentFlags.NONE
            self._emit(flags | ACK, s.start, actions, snd.payload(s))
            if self.first_data_at is None and not s.fin:
                self.first_data_at = now
        if snd.outstanding:
            if self.rto_at is None:
                self._arm_retransmit(now, actions)
            self.persist_at = None
        elif snd.unsent and self.persist_at is None:
            self._arm(TimerKind.PERSIST, now + self.rtt.rto, actions)

    def _arm_retransmit(self, now: float, actions: list) -> None:
        """Arm the RTO, or an earlier tail probe once everything has been sent."""
        deadline = now + self.rtt.rto
        self.probe_due = False
        srtt = self.rtt.srtt
        if srtt is not None and not self.probe_sent and self.sender.all_sent:
            pto = 2 * srtt
            if self.sender.snd_nxt - self.sender.snd_una <= self.params.mss:
                pto += self.params.delayed_ack
            if now + pto < deadline:
                deadline = now + pto
                self.probe_due = True
        self._arm(TimerKind.RTO, deadline, actions)

    def send(self, data: bytes, now: float, actions: list) -> None:
        if self.state not in (ConnState.ESTABLISHED, ConnState.CLOSE_WAIT):
            raise EndpointError("NOT_ESTABLISHED", f"connection is {self.state.name}")
        if len(data) > self.sender.space:
            raise EndpointError("SEND_BUFFER_FULL",
                                f"{len(data)} bytes, {self.sender.space} free")
        self.sender.write(data)
        self._pump(now, actions)

    def close(self, now: float, actions: list) -> None:
        state = self.state
        if state in (ConnState.ESTABLISHED, ConnState.SYN_RCVD):
            self._transition(StateEvent.CLOSE, now)
        elif state is ConnState.CLOSE_WAIT:
            self._transition(StateEvent.CLOSE, now)
        elif state is ConnState.SYN_SENT:
            self._transition(StateEvent.CLOSE, now)
            self._closed(now, actions, ConnEvent.CLOSED)
            return
        else:
            raise EndpointError("ALREADY_CLOSING", f"connection is {state.name}")
        self.sender.fin_requested = True
        self._pump(now, actions)

    # -- timers ---------------------------------------------------------------

    def on_tick(self, now: float, actions: list) -> None:
        if self.dack_at is not None and now >= self.dack_at:
            self.dack_at = None
            if self.receiver is not None and self.ack_pending:
                self._send_ack(actions)
        if self.rto_at is not None and now >= self.rto_at:
            self.rto_at = None
            self._on_rto(now, actions)
            if self.state is ConnState.CLOSED:
                return
        if self.persist_at is not None and now >= self.persist_at:
            self.persist_at = None
            self._on_persist(now, actions)
        if self.time_wait_at is not None and now >= self.time_wait_at:
            self.time_wait_at = None
            self._transition(StateEvent.TIMEOUT, now)
            self._closed(now, actions, ConnEvent.CLOSED)

    def _on_rto(self, now: float, actions: list) -> None:
        if self.probe_due:
            self.probe_due = False
            self.probe_sent = True
            seg = self.sender.tail_probe(now)
            if seg is not None:
                flags = FIN if seg.fin else SegmentFlags.NONE
                self._emit(flags | ACK, seg.start, actions, self.sender.payload(seg))
                self._arm(TimerKind.RTO, now + self.rtt.rto, actions)
            return
        self.rtt.backoff()
        if not self.syn_acked:
            self.syn_retries += 1
            if self.syn_retries > MAX_SYN_RETRIES:
                self._transition(StateEvent.ABORT, now)
                self._closed(now, actions, ConnEvent.RESET)
                return
            self._send_syn(now, actions)
            self._arm(TimerKind.RTO, now + self.rtt.rto, actions)
            return
        snd = self.sender
        seg = snd.on_rto(now)
        if seg is None:
            return
        flags = FIN if seg.fin else SegmentFlags.NONE
        self._emit(flags | ACK, seg.start, actions, snd.payload(seg))
        self._arm(TimerKind.RTO, now + self.rtt.rto, actions)

    def _on_persist(self, now: float, actions: list) -> None:
        snd = self.sender
        if snd.outstanding or not snd.unsent or self.state not in SENDING_STATES:
            return
        if snd.peer_window > 0:
            self._pump(now, actions)
            return
        seg = snd.probe(now)
        if seg is not None:
            self._emit(ACK, seg.start, actions, snd.payload(seg))
            self.rtt.backoff()
            self._arm(TimerKind.RTO, now + self.rtt.rto, actions)
