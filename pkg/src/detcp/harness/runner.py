"""Run scenarios on the simulator and turn the outcome into metrics."""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from ..endpoint import ConnEvent, ConnParams, ConnState, Connection, Endpoint, EndpointConfig, Interface
from ..netsim import Simulation, derive_seed
from ..netsim.topology import Topology
from ..wire import HEADER_LEN
from .scenario import FlowSpec, ScenarioConfig, ScenarioError

CHUNK = 64 * 1024
FIRST_CLIENT_PORT = 40000
# Data segments carry the connection-id option (2 + 8 octets); ACKs carry it
# and, when a hole exists, one SACK block.
DATA_OVERHEAD = HEADER_LEN + 10
ACK_OCTETS = HEADER_LEN + 10


@dataclass
class RunMetrics:
    flow: str
    loss_rate: float
    goodput_bps: float
    utilization: float
    completion_s: float
    retransmissions: int
    losses_random: int
    losses_overflow: int
    rtt_min: float
    rtt_mean: float
    rtt_max: float
    bytes_delivered: int
    transfer_size: int
    bottleneck_bps: float
    digest_ok: bool
    timed_out: bool


@dataclass
class RunResult:
    scenario: str
    loss_rate: Optional[float]
    seed: int
    flows: list[RunMetrics]
    aggregate: Optional[RunMetrics]
    sim_time: float
    sim_metrics: dict
    trace: list = field(repr=False, default_factory=list)
    endpoints: dict[str, Endpoint] = field(repr=False, default_factory=dict)
    simulation: Optional[Simulation] = field(repr=False, default=None)

    @property
    def timed_out(self) -> bool:
        return any(m.timed_out for m in self.flows)


class FlowSource:
    """Deterministic pseudorandom byte stream with a running digest."""

    def __init__(self, seed: int, size: int):
        self.rng = random.Random(seed)
        self.remaining = size
        self.digest = hashlib.sha256()
        self.pending = b""

    def take(self, n: int) -> bytes:
        while len(self.pending) < n and self.remaining > len(self.pending):
            k = min(CHUNK, self.remaining - len(self.pending))
            chunk = self.rng.randbytes(k)
            self.digest.update(chunk)
            self.pending += chunk
        out, self.pending = self.pending[:n], self.pending[n:]
        self.remaining -= len(out)
        return out


@dataclass
class FlowState:
    spec: FlowSpec
    source: FlowSource
    client_port: int
    client_conn: Optional[Connection] = None
    server_conn: Optional[Connection] = None
    received: int = 0
    sink: "hashlib._Hash" = field(default_factory=hashlib.sha256)
    done_at: Optional[float] = None
    close_sent: bool = False

    @property
    def sender_conn(self) -> Optional[Connection]:
        return self.client_conn if self.spec.direction == "upload" else self.server_conn

    @property
    def receiver_conn(self) -> Optional[Connection]:
        return self.server_conn if self.spec.direction == "upload" else self.client_conn


class FlowDriver:
    """Application layer for every node: opens, feeds, drains and closes flows."""

    def __init__(self, flows: list[FlowState], stop_when_done: bool):
        self.flows = flows
        self.stop_when_done = stop_when_done
        self.by_conn: dict[int, FlowState] = {}
        self.by_server = {(f.spec.server, f.spec.port): f for f in flows}
        self.sending: dict[str, list[FlowState]] = {}
        for f in flows:
            self.sending.setdefault(f.spec.sender, []).append(f)
        self.outstanding = len(flows)

    def node_app(self, node: str) -> "NodeApp":
        return NodeApp(self, node)

    def _flow(self, node: str, conn: Connection) -> Optional[FlowState]:
        f = self.by_conn.get(id(conn))
        if f is None:
            f = self.by_server.get((node, conn.local_port))
            if f is not None and f.server_conn is None:
                f.server_conn = conn
                self.by_conn[id(conn)] = f
        return f

    def feed(self, sim: Simulation, node: str) -> None:
        for f in self.sending.get(node, ()):
            conn = f.sender_conn
            if conn is None or f.close_sent:
                continue
            if conn.state not in (ConnState.ESTABLISHED, ConnState.CLOSE_WAIT):
                continue
            space = conn.send_space
            if f.source.remaining and space >= min(conn.params.mss, f.source.remaining):
                data = f.source.take(min(space, f.source.remaining))
                sim.apply(node, conn.endpoint.send_data(conn, data, sim.now))
            if not f.source.remaining:
                f.close_sent = True
                sim.apply(node, conn.endpoint.close_connection(conn, sim.now))


class NodeApp:
    def __init__(self, driver: FlowDriver, node: str):
        self.driver = driver
        self.node = node

    def pump(self, sim: Simulation) -> None:
        self.driver.feed(sim, self.node)

    def on_deliver(self, sim: Simulation, conn: Connection, data: bytes) -> None:
        f = self.driver._flow(self.node, conn)
        if f is None or conn is not f.receiver_conn:
            return
        f.received += len(data)
        f.sink.update(data)
        if f.received >= f.spec.size and f.done_at is None:
            f.done_at = sim.now
            self.driver.outstanding -= 1
            if self.driver.outstanding == 0 and self.driver.stop_when_done:
                sim.stop()

    def on_signal(self, sim: Simulation, conn: Connection, event: ConnEvent) -> None:
        f = self.driver._flow(self.node, conn)
        if f is None:
            return
        if event is ConnEvent.ESTABLISHED:
            self.driver.feed(sim, self.node)
        elif event is ConnEvent.PEER_CLOSED and conn.state is ConnState.CLOSE_WAIT:
            sim.apply(self.node, conn.endpoint.close_connection(conn, sim.now))


# -- sizing ------------------------------------------------------------------------


def path_stats(topo: Topology, cfg: ScenarioConfig, flow: FlowSpec) -> tuple[float, float]:
    """(forward bottleneck bits/s, unloaded round-trip seconds) for a flow."""
    snd, rcv = cfg.node(flow.sender), cfg.node(flow.receiver)
    fwd = [topo.links[l] for l in topo.path(snd.name, rcv.receive_addr)]
    rev = [topo.links[l] for l in topo.path(rcv.name, snd.receive_addr)]
    data_octets = cfg.mss + DATA_OVERHEAD
    rtt = (sum(l.delay + data_octets * 8 / l.capacity for l in fwd)
           + sum(l.delay + ACK_OCTETS * 8 / l.capacity for l in rev))
    return min(l.capacity for l in fwd), rtt


def default_window(topo: Topology, cfg: ScenarioConfig, flow: FlowSpec) -> int:
    """Twice the forward bandwidth-delay product, rounded up to whole segments."""
    capacity, rtt = path_stats(topo, cfg, flow)
    bdp = capacity / 8 * rtt
    return max(2, math.ceil(2 * bdp / cfg.mss)) * cfg.mss


def endpoint_params(topo: Topology, cfg: ScenarioConfig, node: str) -> ConnParams:
    windows = [default_window(topo, cfg, f) for f in cfg.flows if f.sender == node]
    if cfg.window_override is not None:
        window = cfg.window_override
    elif windows:
        window = max(windows)
    else:
        window = max((default_window(topo, cfg, f) for f in cfg.flows), default=64 * cfg.mss)
    recv = cfg.recv_buffer if cfg.recv_buffer is not None else int(cfg.recv_buffer_windows * window)
    return ConnParams(mss=cfg.mss, send_window=window, recv_buffer=recv,
                      send_buffer=max(cfg.send_buffer, window), delayed_ack=cfg.delayed_ack,
                      aimd=cfg.aimd)


# -- running --------------------------------------------------------------------------


def run_scenario(config: ScenarioConfig, loss_override: Optional[float] = None,
                 trace: bool = False, until_closed: bool = False,
                 wire_check: bool = True) -> RunResult:
    """Build, simulate to completion or ``duration_cap``, and measure every flow.

    By default the run stops once every flow's bytes have been delivered;
    ``until_closed`` keeps going until the connections have been torn down.
    """
    cfg = config.resolved()
    if loss_override is not None:
        if not 0 <= loss_override < 1:
            raise ScenarioError("INVALID_VALUE", f"loss {loss_override} outside [0, 1)")
        cfg = cfg.with_loss(loss_override)
    topo = cfg.build()
    sim = Simulation(topo, cfg.master_seed, trace=trace, wire_check=wire_check)
    if not cfg.flows:
        return RunResult(cfg.name, loss_override, cfg.master_seed, [], None, 0.0,
                         sim.metrics(), [], {}, sim)

    states = [FlowState(f, FlowSource(derive_seed(cfg.master_seed, f"flow:{f.name}"), f.size),
                        FIRST_CLIENT_PORT + i)
              for i, f in enumerate(cfg.flows)]
    driver = FlowDriver(states, stop_when_done=not until_closed)

    endpoints: dict[str, Endpoint] = {}
    for name in sorted({n for f in cfg.flows for n in (f.client, f.server)}):
        spec = cfg.node(name)
        ifaces = [Interface(i.interface_id, i.addr, i.role) for i in spec.interfaces]
        ep_cfg = EndpointConfig(ifaces, spec.original_addr, spec.complementary_addr)
        ep = Endpoint(name, ep_cfg, seed=derive_seed(cfg.master_seed, f"endpoint:{name}"),
                      params=endpoint_params(topo, cfg, name), use_conn_id=cfg.use_conn_id,
                      tuple_fallback=cfg.tuple_fallback)
        endpoints[name] = ep
        sim.attach(name, ep, driver.node_app(name))

    for f in states:
        server = endpoints[f.spec.server]
        if f.spec.port not in server.listeners:
            server.open_passive(f.spec.port)

        def start(sim: Simulation, f: FlowState = f) -> None:
            client = endpoints[f.spec.client]
            dest = cfg.node(f.spec.server).receive_addr
            conn, actions = client.open_active(f.client_port, dest, f.spec.port, sim.now)
            f.client_conn = conn
            driver.by_conn[id(conn)] = f
            sim.apply(f.spec.client, actions)

        sim.call_at(f.spec.start, start)

    end, records, sim_metrics = sim.run_until(cfg.duration_cap)
    flows = [_flow_metrics(topo, cfg, f, sim_metrics, loss_override, end) for f in states]
    aggregate = flows[0] if len(flows) == 1 else _aggregate(flows, states, loss_override)
    return RunResult(cfg.name, loss_override, cfg.master_seed, flows, aggregate, end,
                     sim_metrics, records, endpoints, sim)


def _flow_metrics(topo: Topology, cfg: ScenarioConfig, f: FlowState, sim_metrics: dict,
                  loss: Optional[float], end: float) -> RunMetrics:
    capacity, _ = path_stats(topo, cfg, f.spec)
    snd = f.sender_conn
    started = snd.first_data_at if snd is not None else None
    done = f.done_at is not None
    if started is not None:
        finish = f.done_at if done else end
        elapsed = max(finish - started, 0.0)
    else:
        elapsed = 0.0
    nbytes = f.spec.size if done else f.received
    goodput = nbytes * 8 / elapsed if elapsed > 0 else 0.0
    rtt = snd.rtt if snd is not None else None
    retrans = sum(c.retransmissions for c in (f.client_conn, f.server_conn) if c is not None)
    total = sim_metrics["total"]
    return RunMetrics(
        flow=f.spec.name, loss_rate=loss if loss is not None else 0.0,
        goodput_bps=goodput, utilization=goodput / capacity, completion_s=elapsed,
        retransmissions=retrans, losses_random=total["lost_random"],
        losses_overflow=total["lost_overflow"],
        rtt_min=rtt.min if rtt is not None and rtt.samples else 0.0,
        rtt_mean=rtt.mean if rtt is not None else 0.0,
        rtt_max=rtt.max if rtt is not None else 0.0,
        bytes_delivered=f.received, transfer_size=f.spec.size, bottleneck_bps=capacity,
        digest_ok=done and f.sink.digest() == f.source.digest.digest(),
        timed_out=not done)


def _aggregate(flows: list[RunMetrics], states: list[FlowState],
               loss: Optional[float]) -> RunMetrics:
    """All flows together: total bytes over the span from first data to last delivery."""
    starts = [s.sender_conn.first_data_at for s in states
              if s.sender_conn is not None and s.sender_conn.first_data_at is not None]
    ends = [m.completion_s + st for m, st in zip(flows, starts)] if len(starts) == len(flows) else []
    span = (max(ends) - min(starts)) if ends else 0.0
    nbytes = sum(m.bytes_delivered for m in flows)
    goodput = nbytes * 8 / span if span > 0 else 0.0
    bottleneck = min(m.bottleneck_bps for m in flows)
    samples = [m for m in flows if m.rtt_mean > 0]
    return RunMetrics(
        flow="*", loss_rate=loss if loss is not None else 0.0, goodput_bps=goodput,
        utilization=goodput / bottleneck, completion_s=span,
        retransmissions=sum(m.retransmissions for m in flows),
        losses_random=flows[0].losses_random, losses_overflow=flows[0].losses_overflow,
        rtt_min=min((m.rtt_min for m in samples), default=0.0),
        rtt_mean=sum(m.rtt_mean for m in samples) / len(samples) if samples else 0.0,
        rtt_max=max((m.rtt_max for m in samples), default=0.0),
        bytes_delivered=nbytes, transfer_size=sum(m.transfer_size for m in flows),
        bottleneck_bps=bottleneck, digest_ok=all(m.digest_ok for m in flows),
        timed_out=any(m.timed_out for m in flows))


def loss_sweep(config: ScenarioConfig, wire_check: bool = True) -> list[tuple[float, RunResult]]:
    """One run per sweep rate, seeded master_seed + rate index, ordered by rate."""
    if not config.loss_sweep:
        raise ScenarioError("INVALID_VALUE", "scenario has no loss sweep")
    rows = []
    for i, rate in enumerate(config.loss_sweep):
        run = run_scenario(replace(config, master_seed=config.master_seed + i), rate,
                           wire_check=wire_check)
        rows.append((rate, run))
    rows.sort(key=lambda row: row[0])
    return rows


@dataclass
class PendulumResult:
    coupled: RunResult
    decoupled: RunResult
    isolated: dict[str, RunResult]

    def goodput(self, variant: str, flow: str) -> float:
        run = self.coupled if variant == "coupled" else self.decoupled
        if variant == "isolated":
            run = self.isolated[flow]
        return next(m.goodput_bps for m in run.flows if m.flow == flow)

    def aggregate_goodput(self, variant: str) -> float:
        run = self.coupled if variant == "coupled" else self.decoupled
        return sum(m.goodput_bps for m in run.flows)


def run_pendulum_comparison(config: ScenarioConfig) -> PendulumResult:
    """Coupled vs decoupled topologies under identical seeds and flow schedules.

    Each flow is also run alone on the coupled topology as a reference.
    """
    if "coupled" not in config.variants or "decoupled" not in config.variants:
        raise ScenarioError("CONFIG_MISSING_VARIANT",
                            "pendulum needs variants named 'coupled' and 'decoupled'")
    if len(config.flows) < 2:
        raise ScenarioError("CONFIG_MISSING_VARIANT", "pendulum needs two antiparallel flows")
    coupled = run_scenario(config.for_variant("coupled"))
    decoupled = run_scenario(config.for_variant("decoupled"))
    isolated = {}
    for f in config.flows:
        alone = replace(config.for_variant("coupled"), flows=[f])
        isolated[f.name] = run_scenario(alone)
    return PendulumResult(coupled, decoupled, isolated)
