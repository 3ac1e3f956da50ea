"""Static network description: nodes, interfaces, simplex links and routes."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import Iterable, Optional

from ..endpoint.config import InterfaceRole
from ..wire import Address

MAX_HOPS = 64


class TopologyError(Exception):
    """Invalid topology; ``code`` is one of DANGLING_INTERFACE, NO_FORWARD_PATH,
    NO_REVERSE_PATH, ROUTE_LOOP, INVALID_LINK, UNDECLARED_REFERENCE."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


@dataclass(frozen=True)
class InterfaceSpec:
    interface_id: str
    addr: Address
    role: InterfaceRole = InterfaceRole.DUPLEX


@dataclass
class NodeSpec:
    """An endpoint host or a router.

    Endpoints send from ``original_addr`` and receive on ``complementary_addr``
    (or on ``original_addr`` when that is None).
    """

    name: str
    interfaces: list[InterfaceSpec]
    router: bool = False
    original_addr: Optional[Address] = None
    complementary_addr: Optional[Address] = None
    processing_delay: float = 0.0

    def interface(self, interface_id: str) -> Optional[InterfaceSpec]:
        for iface in self.interfaces:
            if iface.interface_id == interface_id:
                return iface
        return None

    @property
    def send_addr(self) -> Optional[Address]:
        if self.original_addr is not None:
            return self.original_addr
        return self.interfaces[0].addr if self.interfaces else None

    @property
    def receive_addr(self) -> Optional[Address]:
        return self.complementary_addr if self.complementary_addr is not None else self.send_addr

    @property
    def send_interface(self) -> Optional[str]:
        for iface in self.interfaces:
            if iface.addr == self.send_addr:
                return iface.interface_id
        return None


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    src_node: str
    src_iface: str
    dst_node: str
    dst_iface: str
    capacity: float          # bits per second
    delay: float             # propagation, seconds
    loss: float = 0.0
    queue_cap: int = 64

    def serialization(self, octets: int) -> float:
        return octets * 8 / self.capacity


@dataclass(frozen=True)
class RouteSpec:
    node: str
    dest: Address
    link_id: str


@dataclass
class Topology:
    nodes: dict[str, NodeSpec]
    links: dict[str, LinkSpec]
    routes: dict[str, dict[Address, str]]
    owner: dict[Address, tuple[str, str]] = field(default_factory=dict)
    out_links: dict[tuple[str, str], list[str]] = field(default_factory=dict)

    def route(self, node: str, dest: Address) -> Optional[str]:
        return self.routes.get(node, {}).get(dest)

    def path(self, src_node: str, dest: Address) -> list[str]:
        """Link ids a packet from ``src_node`` to ``dest`` traverses, following routes."""
        return _walk(self, src_node, dest)


def _walk(topo: Topology, node: str, dest: Address) -> list[str]:
    target = topo.owner.get(dest)
    if target is None:
        raise LookupError(f"{dest} is not assigned to any interface")
    links: list[str] = []
    seen = {node}
    while node != target[0]:
        link_id = topo.route(node, dest)
        if link_id is None:
            raise LookupError(f"no route at {node} for {dest}")
        links.append(link_id)
        node = topo.links[link_id].dst_node
        if node in seen or len(links) > MAX_HOPS:
            raise TopologyError("ROUTE_LOOP", f"route to {dest} revisits {node}")
        seen.add(node)
    return links


def _may_originate(topo: Topology, link: LinkSpec) -> bool:
    """Routers forward on any link; endpoints send only from their original interface."""
    spec = topo.nodes[link.src_node]
    return spec.router or link.src_iface == spec.send_interface


def _derive_routes(topo: Topology, explicit: dict[str, dict[Address, str]]) -> None:
    """Shortest-hop routes toward every receiving address, forwarding only via routers."""
    incoming: dict[str, list[LinkSpec]] = {}
    for link in topo.links.values():
        incoming.setdefault(link.dst_node, []).append(link)

    for dest, (dst_node, dst_iface) in topo.owner.items():
        if not topo.nodes[dst_node].interface(dst_iface).role.can_receive:
            continue
        next_link: dict[str, str] = {}
        queue: deque[str] = deque()
        for link in incoming.get(dst_node, []):
            if (link.dst_iface == dst_iface and link.src_node not in next_link
                    and _may_originate(topo, link)):
                next_link[link.src_node] = link.link_id
                queue.append(link.src_node)
        while queue:
            node = queue.popleft()
            if not topo.nodes[node].router:
                continue
            for link in incoming.get(node, []):
                if (link.src_node not in next_link and link.src_node != dst_node
                        and _may_originate(topo, link)):
                    next_link[link.src_node] = link.link_id
                    queue.append(link.src_node)
        for node, link_id in next_link.items():
            topo.routes.setdefault(node, {})[dest] = link_id

    for node, table in explicit.items():
        topo.routes.setdefault(node, {}).update(table)


def build_topology(nodes: Iterable[NodeSpec], links: Iterable[LinkSpec],
                   routes: Iterable[RouteSpec] = (),
                   pairs: Iterable[tuple[str, str]] = ()) -> Topology:
    """Validate a network description and derive static routes.

    ``pairs`` lists (client, server) endpoint pairs that must be connected in
    both directions: client send address to server receive address, and back.
    """
    node_map: dict[str, NodeSpec] = {}
    for node in nodes:
        if node.name in node_map:
            raise TopologyError("INVALID_LINK", f"duplicate node {node.name!r}")
        node_map[node.name] = node
    topo = Topology(nodes=node_map, links={}, routes={})

    for node in node_map.values():
        for iface in node.interfaces:
            addr = IPv4Address(iface.addr)
            if addr in topo.owner:
                raise TopologyError("INVALID_LINK", f"address {addr} assigned twice")
            topo.owner[addr] = (node.name, iface.interface_id)

    for link in links:
        if link.link_id in topo.links:
            raise TopologyError("INVALID_LINK", f"duplicate link {link.link_id!r}")
        for end_node, end_iface in ((link.src_node, link.src_iface),
                                    (link.dst_node, link.dst_iface)):
            if end_node not in node_map:
                raise TopologyError("UNDECLARED_REFERENCE",
                                    f"link {link.link_id} names node {end_node!r}")
            if node_map[end_node].interface(end_iface) is None:
                raise TopologyError("UNDECLARED_REFERENCE",
                                    f"link {link.link_id} names interface {end_node}.{end_iface}")
        if not node_map[link.src_node].interface(link.src_iface).role.can_send:
            raise TopologyError("INVALID_LINK",
                                f"link {link.link_id} leaves receive-only {link.src_node}.{link.src_iface}")
        if not node_map[link.dst_node].interface(link.dst_iface).role.can_receive:
            raise TopologyError("INVALID_LINK",
                                f"link {link.link_id} enters send-only {link.dst_node}.{link.dst_iface}")
        if link.capacity <= 0 or link.delay < 0 or not 0 <= link.loss < 1 or link.queue_cap < 1:
            raise TopologyError("INVALID_LINK", f"link {link.link_id} has invalid parameters")
        topo.links[link.link_id] = link
        topo.out_links.setdefault((link.src_node, link.src_iface), []).append(link.link_id)

    has_in = {(l.dst_node, l.dst_iface) for l in topo.links.values()}
    for node in node_map.values():
        for iface in node.interfaces:
            key = (node.name, iface.interface_id)
            if iface.role is InterfaceRole.SEND_ONLY and key not in topo.out_links:
                raise TopologyError("DANGLING_INTERFACE",
                                    f"send-only {node.name}.{iface.interface_id} has no outgoing link")
            if iface.role is InterfaceRole.RECEIVE_ONLY and key not in has_in:
                raise TopologyError("DANGLING_INTERFACE",
                                    f"receive-only {node.name}.{iface.interface_id} has no incoming link")

    explicit: dict[str, dict[Address, str]] = {}
    for r in routes:
        if r.node not in node_map:
            raise TopologyError("UNDECLARED_REFERENCE", f"route at unknown node {r.node!r}")
        if r.link_id not in topo.links:
            raise TopologyError("UNDECLARED_REFERENCE", f"route uses unknown link {r.link_id!r}")
        if topo.links[r.link_id].src_node != r.node:
            raise TopologyError("INVALID_LINK",
                                f"route at {r.node} uses link {r.link_id} that starts elsewhere")
        explicit.setdefault(r.node, {})[IPv4Address(r.dest)] = r.link_id
    _derive_routes(topo, explicit)
    for node, table in topo.routes.items():
        for dest in table:
            try:
                _walk(topo, node, dest)
            except LookupError:
                pass  # a hole further on surfaces as NO_ROUTE when used

    for client, server in pairs:
        for a, b, code in ((client, server, "NO_FORWARD_PATH"), (server, client, "NO_REVERSE_PATH")):
            if a not in node_map or b not in node_map:
                raise TopologyError("UNDECLARED_REFERENCE", f"pair names unknown node {a!r}/{b!r}")
            dest = node_map[b].receive_addr
            try:
                path = _walk(topo, a, dest)
            except LookupError as exc:
                raise TopologyError(code, f"{a} -> {b} ({dest}): {exc}") from None
            first = topo.links[path[0]] if path else None
            if first is None or first.src_iface != node_map[a].send_interface:
                raise TopologyError(code, f"{a} cannot reach {dest} from its sending interface")
    return topo


def find_path(topo: Topology, src_node: str, dest: Address) -> list[str]:
    return topo.path(src_node, IPv4Address(dest))
