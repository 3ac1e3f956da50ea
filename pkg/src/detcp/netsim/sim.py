"""Deterministic discrete-event loop driving links, routers and endpoints."""

from __future__ import annotations

import heapq
from enum import IntEnum
from typing import Callable, Optional, Protocol

from ..endpoint import ArmTimer, Deliver, Emit, Endpoint, Signal
from ..endpoint.actions import ConnEvent
from ..wire import Envelope, decode_segment, encode_segment
from .link import SimplexLink
from .topology import Topology
from .trace import Disposition, TraceRecord


class SimError(Exception):
    """Simulator failure; ``code`` is EVENT_IN_PAST, WRONG_LINK or NO_ROUTE."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class EventKind(IntEnum):
    LINK_DELIVERY = 0
    LINK_DEQUEUE = 1
    ENDPOINT_TICK = 2
    APP_CALL = 3
    ROUTER_FORWARD = 4


class Application(Protocol):
    """Receives an endpoint's deliveries and signals.

    An application may also define ``pump(sim)``; it is called after every
    segment the node processes, so senders can refill freed buffer space.
    """

    def on_deliver(self, sim: "Simulation", conn, data: bytes) -> None: ...
    def on_signal(self, sim: "Simulation", conn, event: ConnEvent) -> None: ...


class Simulation:
    """Runs one topology with attached endpoints.

    With ``wire_check`` every segment is encoded when it enters the network
    and decoded where it leaves, so endpoints only ever see parsed copies.
    """

    def __init__(self, topology: Topology, master_seed: int = 0, trace: bool = False,
                 wire_check: bool = True):
        self.topology = topology
        self.master_seed = master_seed
        self.now = 0.0
        self.tracing = trace
        self.trace: list[TraceRecord] = []
        self.wire_check = wire_check
        self.links = {lid: SimplexLink(spec, master_seed) for lid, spec in topology.links.items()}
        self.endpoints: dict[str, Endpoint] = {}
        self.apps: dict[str, Application] = {}
        self._pumps: dict[str, Callable] = {}
        self.no_route = 0
        self.unclaimed = 0
        self.events_run = 0
        self._heap: list = []
        self._seqno = 0
        self._tick_at: dict[str, Optional[float]] = {}
        self._stopped = False

    # -- setup --------------------------------------------------------------

    def attach(self, node: str, endpoint: Endpoint, app: Optional[Application] = None) -> None:
        if node not in self.topology.nodes:
            raise SimError("NO_ROUTE", f"unknown node {node!r}")
        self.endpoints[node] = endpoint
        self._tick_at[node] = None
        if app is not None:
            self.apps[node] = app
            pump = getattr(app, "pump", None)
            if pump is not None:
                self._pumps[node] = pump

    def stop(self) -> None:
        """Ask :meth:`run_until` to return after the current event."""
        self._stopped = True

    # -- scheduling -----------------------------------------------------------

    def schedule(self, time: float, kind: EventKind, payload) -> None:
        if time < self.now:
            raise SimError("EVENT_IN_PAST", f"{kind.name} at {time} < now {self.now}")
        self._seqno += 1
        heapq.heappush(self._heap, (time, self._seqno, kind, payload))

    def call_at(self, time: float, fn: Callable[["Simulation"], None]) -> None:
        """Schedule an application call; ``fn`` receives the simulation."""
        self.schedule(time, EventKind.APP_CALL, fn)

    def apply(self, node: str, actions: list) -> None:
        """Carry out an endpoint's action list."""
        for a in actions:
            if isinstance(a, Emit):
                self.emit(node, a.interface_id, a.envelope)
            elif isinstance(a, ArmTimer):
                pending = self._tick_at[node]
                if pending is None or a.deadline < pending:
                    self._tick_at[node] = a.deadline
                    self.schedule(max(a.deadline, self.now), EventKind.ENDPOINT_TICK, node)
            elif isinstance(a, Deliver):
                app = self.apps.get(node)
                if app is not None:
                    app.on_deliver(self, a.conn, a.data)
            elif isinstance(a, Signal):
                app = self.apps.get(node)
                if app is not None:
                    app.on_signal(self, a.conn, a.event)

    # -- packet movement --------------------------------------------------------

    def _record(self, node: str, iface: str, link: str, env: Envelope, event: str,
                disp: Disposition) -> None:
        self.trace.append(TraceRecord(self.now, event, node, iface, link, env, disp))

    def emit(self, node: str, interface_id: str, env: Envelope) -> None:
        """Egress from an endpoint interface: routed link, else the interface's only link."""
        topo = self.topology
        link_id = topo.route(node, env.dst_addr)
        if link_id is None or topo.links[link_id].src_iface != interface_id:
            outs = topo.out_links.get((node, interface_id), ())
            link_id = outs[0] if len(outs) == 1 else None
        if link_id is None:
            self._drop_no_route(node, interface_id, env)
            return
        data = encode_segment(env.segment) if self.wire_check else None
        self.transmit(node, interface_id, link_id, env, data)

    def transmit(self, node: str, interface_id: str, link_id: str, env: Envelope,
                 data: Optional[bytes] = None) -> None:
        link = self.links[link_id]
        spec = link.spec
        if spec.src_node != node or spec.src_iface != interface_id:
            raise SimError("WRONG_LINK",
                           f"{link_id} runs {spec.src_node}.{spec.src_iface} -> "
                           f"{spec.dst_node}.{spec.dst_iface}, not from {node}.{interface_id}")
        octets = len(data) if data is not None else env.segment.wire_len
        item = (env, data, octets)
        accepted = link.offer(item)
        if self.tracing:
            disp = Disposition.ENQUEUED if accepted else Disposition.LOST_OVERFLOW
            self._record(node, interface_id, link_id, env, "TRANSMIT", disp)
        if accepted and len(link.queue) == 1:
            self.schedule(self.now + octets * 8 / spec.capacity, EventKind.LINK_DEQUEUE, link)

    def _on_dequeue(self, link: SimplexLink) -> None:
        item, lost = link.finish_head()
        spec = link.spec
        if lost:
            if self.tracing:
                self._record(spec.src_node, spec.src_iface, spec.link_id, item[0],
                             "LINK_DEQUEUE", Disposition.LOST_RANDOM)
        else:
            self.schedule(self.now + spec.delay, EventKind.LINK_DELIVERY, (link, item))
        if link.queue:
            nxt = link.queue[0]
            self.schedule(self.now + nxt[2] * 8 / spec.capacity, EventKind.LINK_DEQUEUE, link)

    def _on_delivery(self, link: SimplexLink, item) -> None:
        env, data, octets = item
        link.arrived(octets)
        spec = link.spec
        if self.tracing:
            self._record(spec.dst_node, spec.dst_iface, spec.link_id, env,
                         "LINK_DELIVERY", Disposition.DELIVERED)
        node = spec.dst_node
        node_spec = self.topology.nodes[node]
        if node_spec.router:
            self.forward_at_router(node, env, data)
            return
        owner = self.topology.owner.get(env.dst_addr)
        endpoint = self.endpoints.get(node)
        if owner is None or owner[0] != node or endpoint is None:
            self.unclaimed += 1
            return
        if data is not None:
            env = Envelope(env.src_addr, env.dst_addr, decode_segment(data))
        self.apply(node, endpoint.on_segment(spec.dst_iface, env, self.now))
        pump = self._pumps.get(node)
        if pump is not None:
            pump(self)

    def forward_at_router(self, router: str, env: Envelope, data: Optional[bytes] = None) -> None:
        """Hand a packet to the router's egress link after its processing delay."""
        delay = self.topology.nodes[router].processing_delay
        if delay > 0:
            self.schedule(self.now + delay, EventKind.ROUTER_FORWARD, (router, env, data))
        else:
            self._forward(router, env, data)

    def _forward(self, router: str, env: Envelope, data: Optional[bytes]) -> None:
        link_id = self.topology.route(router, env.dst_addr)
        if link_id is None:
            self._drop_no_route(router, "-", env)
            return
        spec = self.topology.links[link_id]
        self.transmit(router, spec.src_iface, link_id, env, data)

    def _drop_no_route(self, node: str, iface: str, env: Envelope) -> None:
        self.no_route += 1
        if self.tracing:
            self._record(node, iface, "", env, "FORWARD", Disposition.DROPPED_NO_ROUTE)

    # -- main loop ----------------------------------------------------------------

    def run_until(self, end_time: float):
        """Execute events up to ``end_time``; returns (time, trace, metrics)."""
        if end_time < self.now:
            raise SimError("EVENT_IN_PAST", f"end {end_time} < now {self.now}")
        heap = self._heap
        self._stopped = False
        while heap and not self._stopped:
            if heap[0][0] > end_time:
                self.now = end_time
                break
            time, _, kind, payload = heapq.heappop(heap)
            if time < self.now:
                raise SimError("EVENT_IN_PAST", f"{kind.name} at {time} < now {self.now}")
            self.now = time
            self.events_run += 1
            if kind is EventKind.LINK_DELIVERY:
                self._on_delivery(*payload)
            elif kind is EventKind.LINK_DEQUEUE:
                self._on_dequeue(payload)
            elif kind is EventKind.ENDPOINT_TICK:
                self._on_tick(payload, time)
            elif kind is EventKind.APP_CALL:
                payload(self)
            else:
                self._forward(*payload)
        return self.now, self.trace, self.metrics()

    def _on_tick(self, node: str, time: float) -> None:
        if self._tick_at[node] != time:
            return  # superseded by an earlier deadline
        self._tick_at[node] = None
        endpoint = self.endpoints[node]
        self.apply(node, endpoint.on_tick(self.now))
        nxt = endpoint.next_deadline()
        pending = self._tick_at[node]
        if nxt is not None and (pending is None or nxt < pending):
            self._tick_at[node] = max(nxt, self.now)
            self.schedule(self._tick_at[node], EventKind.ENDPOINT_TICK, node)

    def metrics(self) -> dict:
        links = {}
        for lid in sorted(self.links):
            link = self.links[lid]
            c = link.counters
            links[lid] = {"injected": c.injected, "delivered": c.delivered,
                          "lost_random": c.lost_random, "lost_overflow": c.lost_overflow,
                          "in_flight": link.in_flight, "bytes_delivered": c.bytes_delivered,
                          "max_queue": c.max_queue}
        total = {k: sum(v[k] for v in links.values())
                 for k in ("injected", "delivered", "lost_random", "lost_overflow", "in_flight")}
        total["no_route"] = self.no_route
        total["unclaimed"] = self.unclaimed
        total["events"] = self.events_run
        return {"time": self.now, "links": links, "total": total}
