"""Scripted driver that carries endpoint actions between hosts without netsim."""

from __future__ import annotations

import heapq
from collections import defaultdict
from ipaddress import IPv4Address
from typing import Callable, Optional

from detcp.endpoint import (Deliver, Emit, Endpoint, EndpointConfig, Interface,
                            InterfaceRole, Signal)
from detcp.wire import Envelope, decode_segment, encode_segment

A = IPv4Address

CLIENT_TX, CLIENT_RX = A("10.0.2.1"), A("10.0.1.1")
SERVER_TX, SERVER_RX = A("10.0.1.2"), A("10.0.2.2")


def dual_simplex_config(tx, rx, ports=()) -> EndpointConfig:
    return EndpointConfig(
        interfaces=[Interface("tx", A(tx), InterfaceRole.SEND_ONLY),
                    Interface("rx", A(rx), InterfaceRole.RECEIVE_ONLY)],
        original_addr=A(tx), complementary_addr=A(rx), listen_ports=set(ports))


def duplex_config(addr, ports=()) -> EndpointConfig:
    return EndpointConfig(interfaces=[Interface("eth", A(addr), InterfaceRole.DUPLEX)],
                          original_addr=A(addr), listen_ports=set(ports))


def make_pair(client_iss=None, server_iss=None, params=None, seed=1, **kw):
    client = Endpoint("client", dual_simplex_config(CLIENT_TX, CLIENT_RX), seed=seed,
                      params=params, iss=client_iss, **kw)
    server = Endpoint("server", dual_simplex_config(SERVER_TX, SERVER_RX), seed=seed + 1,
                      params=params, iss=server_iss, **kw)
    return client, server


class Wire:
    """Delivers emitted segments after a fixed one-way delay and fires timers.

    Every segment is encoded and decoded on the way, and the log records
    (time, sender name, egress interface, envelope) for later assertions.
    """

    def __init__(self, *endpoints: Endpoint, delay: float = 0.01):
        self.delay = delay
        self.now = 0.0
        self.endpoints = {e.name: e for e in endpoints}
        self.owner: dict = {}
        for e in endpoints:
            for iface in e.config.interfaces:
                self.owner[iface.addr] = (e, iface.interface_id)
        self.log: list[tuple[float, str, str, Envelope]] = []
        self.delivered: dict[str, bytearray] = defaultdict(bytearray)
        self.signals: dict[str, list] = defaultdict(list)
        self.drop: Optional[Callable[[Envelope], bool]] = None
        self.rewrite: Optional[Callable[[Envelope], Envelope]] = None
        self._heap: list = []
        self._n = 0

    def feed(self, name: str, actions: list) -> None:
        sender = self.endpoints[name]
        for a in actions:
            if isinstance(a, Emit):
                role = sender.config.interface(a.interface_id).role
                assert role.can_send, f"{name} emitted on {a.interface_id} ({role})"
                self.log.append((self.now, name, a.interface_id, a.envelope))
                env = a.envelope
                if self.drop is not None and self.drop(env):
                    continue
                if self.rewrite is not None:
                    env = self.rewrite(env)
                self._n += 1
                heapq.heappush(self._heap, (self.now + self.delay, self._n, env))
            elif isinstance(a, Deliver):
                self.delivered[name] += a.data
            elif isinstance(a, Signal):
                self.signals[name].append(a.event)

    def _next_timer(self) -> Optional[float]:
        times = [d for e in self.endpoints.values() if (d := e.next_deadline()) is not None]
        return min(times) if times else None

    def step(self, until: float = float("inf")) -> bool:
        timer = self._next_timer()
        arrival = self._heap[0][0] if self._heap else None
        if arrival is None and timer is None:
            return False
        if min(t for t in (arrival, timer) if t is not None) > until:
            return False
        if arrival is not None and (timer is None or arrival <= timer):
            t, _, env = heapq.heappop(self._heap)
            self.now = max(self.now, t)
            if env.dst_addr not in self.owner:
                return True
            endpoint, iface = self.owner[env.dst_addr]
            env = Envelope(env.src_addr, env.dst_addr, decode_segment(encode_segment(env.segment)))
            self.feed(endpoint.name, endpoint.on_segment(iface, env, self.now))
        else:
            self.now = max(self.now, timer)
            for e in self.endpoints.values():
                self.feed(e.name, e.on_tick(self.now))
        return True

    def run(self, until: float = 60.0, stop: Optional[Callable[[], bool]] = None) -> None:
        while True:
            if stop is not None and stop():
                return
            if not self.step(until):
                return

    def segments(self, sender: Optional[str] = None):
        return [env.segment for _, name, _, env in self.log if sender is None or name == sender]


def handshake(client: Endpoint, server: Endpoint, wire: Wire, port: int = 80,
              client_port: int = 40000):
    server.open_passive(port)
    conn, actions = client.open_active(client_port, SERVER_RX, port, wire.now)
    wire.feed("client", actions)
    wire.run(stop=lambda: bool(server.connections) and conn.state.name == "ESTABLISHED"
             and server.connections[0].state.name == "ESTABLISHED")
    return conn, server.connections[0]
