"""Line-oriented scenario files.

A scenario is a sequence of ``[section]`` headers followed by ``key = value``
lines; ``#`` starts a comment. Sections::

    [scenario]          name, seed, duration_cap, mss, window, recv_buffer, ...
    [node NAME]         router, iface ID = ADDR ROLE, original, complementary
    [link ID]           from = NODE.IFACE, to = NODE.IFACE, rate, delay, loss,
                        queue, duplex, rate_rev, delay_rev, sweep
    [route NODE]        ADDR = LINK_ID
    [flow NAME]         client, server, port, size, start, direction
    [sweep]             loss = comma separated rates

Node, link and route sections may carry ``variant = NAME`` to belong to one
topology variant only (see ``variants`` in ``[scenario]``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from importlib import resources
from ipaddress import IPv4Address
from pathlib import Path
from typing import Optional, Union

from ..endpoint.config import InterfaceRole
from ..netsim.topology import (InterfaceSpec, LinkSpec, NodeSpec, RouteSpec, Topology,
                               build_topology)


class ScenarioError(Exception):
    """``code`` is PARSE_ERROR, UNDECLARED_REFERENCE, INVALID_VALUE or
    CONFIG_MISSING_VARIANT."""

    def __init__(self, code: str, message: str, line: Optional[int] = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{code}: {message}{where}")
        self.code = code
        self.line = line


UNITS_RATE = {"": 1, "bps": 1, "bit": 1, "kbps": 1e3, "kbit": 1e3, "k": 1e3,
              "mbps": 1e6, "mbit": 1e6, "m": 1e6, "gbps": 1e9, "gbit": 1e9, "g": 1e9}
UNITS_TIME = {"": 1, "s": 1, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
UNITS_SIZE = {"": 1, "b": 1, "kb": 1000, "mb": 1000 ** 2, "gb": 1000 ** 3,
              "kib": 1024, "mib": 1024 ** 2, "gib": 1024 ** 3}
ROLES = {"duplex": InterfaceRole.DUPLEX, "send": InterfaceRole.SEND_ONLY,
         "receive": InterfaceRole.RECEIVE_ONLY}
_NUM = re.compile(r"^([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z%]*)$")


def _quantity(text: str, units: dict, line: int, what: str) -> float:
    m = _NUM.match(text.strip())
    if not m or m.group(2).lower() not in units:
        raise ScenarioError("INVALID_VALUE", f"bad {what} {text!r}", line)
    return float(m.group(1)) * units[m.group(2).lower()]


def parse_rate(text: str, line: int = 0) -> float:
    return _quantity(text, UNITS_RATE, line, "rate")


def parse_time(text: str, line: int = 0) -> float:
    return _quantity(text, UNITS_TIME, line, "duration")


def parse_size(text: str, line: int = 0) -> int:
    return int(_quantity(text, UNITS_SIZE, line, "size"))


def parse_probability(text: str, line: int = 0) -> float:
    text = text.strip()
    try:
        value = float(text[:-1]) / 100 if text.endswith("%") else float(text)
    except ValueError:
        raise ScenarioError("INVALID_VALUE", f"bad probability {text!r}", line) from None
    if not 0 <= value < 1:
        raise ScenarioError("INVALID_VALUE", f"probability {text!r} outside [0, 1)", line)
    return value


def parse_bool(text: str, line: int = 0) -> bool:
    low = text.strip().lower()
    if low in ("yes", "true", "on", "1"):
        return True
    if low in ("no", "false", "off", "0"):
        return False
    raise ScenarioError("INVALID_VALUE", f"bad boolean {text!r}", line)


def parse_address(text: str, line: int = 0) -> IPv4Address:
    try:
        return IPv4Address(text.strip())
    except ValueError:
        raise ScenarioError("INVALID_VALUE", f"bad address {text!r}", line) from None


@dataclass
class FlowSpec:
    """A bulk transfer. ``direction`` upload sends client to server, download the reverse."""

    name: str
    client: str
    server: str
    port: int = 80
    size: int = 1_000_000
    start: float = 0.0
    direction: str = "upload"

    @property
    def sender(self) -> str:
        return self.client if self.direction == "upload" else self.server

    @property
    def receiver(self) -> str:
        return self.server if self.direction == "upload" else self.client


@dataclass
class VariantParts:
    nodes: list[NodeSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    routes: list[RouteSpec] = field(default_factory=list)
    sweep_links: set[str] = field(default_factory=set)


@dataclass
class ScenarioConfig:
    name: str = "unnamed"
    master_seed: int = 1
    nodes: list[NodeSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    routes: list[RouteSpec] = field(default_factory=list)
    flows: list[FlowSpec] = field(default_factory=list)
    loss_sweep: list[float] = field(default_factory=list)
    duration_cap: float = 600.0
    window_override: Optional[int] = None
    mss: int = 1000
    recv_buffer: Optional[int] = None
    recv_buffer_windows: float = 4.0
    send_buffer: int = 4 * 1024 * 1024
    delayed_ack: float = 0.05
    aimd: bool = False
    use_conn_id: bool = True
    tuple_fallback: bool = True
    sweep_links: set[str] = field(default_factory=set)
    variants: dict[str, VariantParts] = field(default_factory=dict)
    variant: Optional[str] = None

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def for_variant(self, variant: str) -> "ScenarioConfig":
        """The scenario with one variant's nodes, links and routes merged in."""
        if variant not in self.variants:
            raise ScenarioError("UNDECLARED_REFERENCE", f"no variant {variant!r}")
        parts = self.variants[variant]
        return replace(self, nodes=self.nodes + parts.nodes, links=self.links + parts.links,
                       routes=self.routes + parts.routes,
                       sweep_links=self.sweep_links | parts.sweep_links,
                       variants={}, variant=variant)

    def resolved(self) -> "ScenarioConfig":
        """Select the first variant when variants exist and none is chosen."""
        if self.variants and self.variant is None:
            return self.for_variant(next(iter(self.variants)))
        return self

    def build(self) -> Topology:
        cfg = self.resolved()
        pairs = [(f.client, f.server) for f in cfg.flows]
        return build_topology(cfg.nodes, cfg.links, cfg.routes, pairs)

    def with_loss(self, loss: float) -> "ScenarioConfig":
        """Set ``loss`` on the sweep links (every link when none are marked)."""
        cfg = self.resolved()
        targets = cfg.sweep_links or {l.link_id for l in cfg.links}
        links = [replace(l, loss=loss) if l.link_id in targets else l for l in cfg.links]
        return replace(cfg, links=links)


# -- parser ---------------------------------------------------------------------


@dataclass
class _Section:
    kind: str
    name: Optional[str]
    line: int
    items: list[tuple[str, str, int]] = field(default_factory=list)

    def get(self, key: str) -> Optional[tuple[str, int]]:
        for k, v, ln in self.items:
            if k == key:
                return v, ln
        return None


SECTION_KINDS = {"scenario": False, "node": True, "link": True, "route": True,
                 "flow": True, "sweep": False}
KEYS = {
    "scenario": {"name", "seed", "duration_cap", "mss", "window", "recv_buffer",
                 "recv_buffer_windows", "send_buffer", "delayed_ack", "aimd", "conn_id",
                 "tuple_fallback", "variants", "queue"},
    "node": {"router", "original", "complementary", "processing_delay", "variant"},
    "link": {"from", "to", "rate", "delay", "loss", "queue", "duplex", "rate_rev",
             "delay_rev", "loss_rev", "sweep", "variant"},
    "flow": {"client", "server", "port", "size", "start", "direction"},
    "sweep": {"loss"},
}


def _lex(text: str) -> list[_Section]:
    sections: list[_Section] = []
    current: Optional[_Section] = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError("PARSE_ERROR", f"unterminated section header {raw.strip()!r}", ln)
            words = line[1:-1].split()
            if not words or words[0] not in SECTION_KINDS:
                raise ScenarioError("PARSE_ERROR", f"unknown section {line!r}", ln)
            kind = words[0]
            named = SECTION_KINDS[kind]
            if named and len(words) != 2 or not named and len(words) != 1:
                raise ScenarioError("PARSE_ERROR", f"malformed section header {line!r}", ln)
            current = _Section(kind, words[1] if named else None, ln)
            sections.append(current)
            continue
        if "=" not in line:
            raise ScenarioError("PARSE_ERROR", f"expected key = value, got {line!r}", ln)
        if current is None:
            raise ScenarioError("PARSE_ERROR", "key outside any section", ln)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ScenarioError("PARSE_ERROR", f"empty key or value in {line!r}", ln)
        if current.kind == "route":
            pass
        elif current.kind == "node" and key.startswith("iface "):
            pass
        elif key not in KEYS[current.kind]:
            raise ScenarioError("PARSE_ERROR", f"unknown key {key!r} in [{current.kind}]", ln)
        current.items.append((key, value, ln))
    return sections


class _Builder:
    def __init__(self, sections: list[_Section]):
        self.sections = sections
        self.cfg = ScenarioConfig()
        self.default_queue = 64
        # Keys carry the variant (None for shared) so one host name may be
        # declared with different interfaces in different variants.
        self.node_lines: dict[tuple[Optional[str], str], int] = {}
        self.iface_addr: dict[tuple[Optional[str], str, str], IPv4Address] = {}

    def parts(self, variant: Optional[str], line: int):
        if variant is None:
            return self.cfg
        if variant not in self.cfg.variants:
            raise ScenarioError("UNDECLARED_REFERENCE", f"variant {variant!r}", line)
        return self.cfg.variants[variant]

    def build(self) -> ScenarioConfig:
        by_kind: dict[str, list[_Section]] = {}
        for s in self.sections:
            by_kind.setdefault(s.kind, []).append(s)
        scen = by_kind.get("scenario", [])
        if len(scen) > 1:
            raise ScenarioError("PARSE_ERROR", "more than one [scenario] section", scen[1].line)
        for s in scen:
            self.scenario(s)
        for s in by_kind.get("node", []):
            self.node(s)
        for s in by_kind.get("link", []):
            self.link(s)
        for s in by_kind.get("route", []):
            self.route(s)
        for s in by_kind.get("flow", []):
            self.flow(s)
        for s in by_kind.get("sweep", []):
            for key, value, ln in s.items:
                self.cfg.loss_sweep.extend(self._sweep_rate(v, ln) for v in value.split(","))
        return self.cfg

    @staticmethod
    def _sweep_rate(text: str, line: int) -> float:
        rate = parse_probability(text, line)
        if rate > 0.5:
            raise ScenarioError("INVALID_VALUE", f"sweep rate {text.strip()!r} above 0.5", line)
        return rate

    def scenario(self, s: _Section) -> None:
        cfg = self.cfg
        for key, value, ln in s.items:
            if key == "name":
                cfg.name = value
            elif key == "seed":
                cfg.master_seed = self._int(value, ln, lo=0)
            elif key == "duration_cap":
                cfg.duration_cap = self._positive(parse_time(value, ln), value, ln)
            elif key == "mss":
                cfg.mss = self._int(value, ln, lo=1)
            elif key == "window":
                cfg.window_override = None if value == "auto" else self._positive_size(value, ln)
            elif key == "recv_buffer":
                cfg.recv_buffer = self._positive_size(value, ln)
            elif key == "recv_buffer_windows":
                cfg.recv_buffer_windows = self._positive(self._float(value, ln), value, ln)
            elif key == "send_buffer":
                cfg.send_buffer = self._positive_size(value, ln)
            elif key == "delayed_ack":
                cfg.delayed_ack = parse_time(value, ln)
            elif key == "aimd":
                cfg.aimd = parse_bool(value, ln)
            elif key == "conn_id":
                cfg.use_conn_id = parse_bool(value, ln)
            elif key == "tuple_fallback":
                cfg.tuple_fallback = parse_bool(value, ln)
            elif key == "queue":
                self.default_queue = self._int(value, ln, lo=1)
            elif key == "variants":
                for name in (v.strip() for v in value.split(",")):
                    if not name:
                        raise ScenarioError("PARSE_ERROR", "empty variant name", ln)
                    cfg.variants[name] = VariantParts()

    def has_node(self, name: str, variant: Optional[str] = None) -> bool:
        if variant is None:
            return any(n == name for _, n in self.node_lines)
        return (variant, name) in self.node_lines or (None, name) in self.node_lines

    def iface(self, node: str, iface: str, variant: Optional[str]) -> Optional[IPv4Address]:
        addr = self.iface_addr.get((variant, node, iface))
        return addr if addr is not None else self.iface_addr.get((None, node, iface))

    def node(self, s: _Section) -> None:
        name = s.name
        found = s.get("variant")
        variant = found[0] if found else None
        if found:
            self.parts(variant, found[1])
        clash = ((None, name) in self.node_lines or (variant, name) in self.node_lines
                 or variant is None and self.has_node(name))
        if clash:
            raise ScenarioError("PARSE_ERROR", f"node {name!r} declared twice", s.line)
        self.node_lines[(variant, name)] = s.line
        ifaces: list[InterfaceSpec] = []
        router = False
        original = complementary = None
        delay = 0.0
        for key, value, ln in s.items:
            if key.startswith("iface "):
                iface_id = key.split(None, 1)[1].strip()
                words = value.split()
                if len(words) not in (1, 2):
                    raise ScenarioError("PARSE_ERROR", f"iface wants ADDR [ROLE], got {value!r}", ln)
                role = ROLES.get(words[1].lower()) if len(words) == 2 else InterfaceRole.DUPLEX
                if role is None:
                    raise ScenarioError("INVALID_VALUE", f"unknown role {words[1]!r}", ln)
                addr = parse_address(words[0], ln)
                ifaces.append(InterfaceSpec(iface_id, addr, role))
                self.iface_addr[(variant, name, iface_id)] = addr
            elif key == "router":
                router = parse_bool(value, ln)
            elif key == "original":
                original = (value, ln)
            elif key == "complementary":
                complementary = (value, ln)
            elif key == "processing_delay":
                delay = parse_time(value, ln)
        if not ifaces:
            raise ScenarioError("INVALID_VALUE", f"node {name!r} has no interfaces", s.line)
        orig_addr = self._node_addr(name, original, variant) if original else None
        comp_addr = self._node_addr(name, complementary, variant) if complementary else None
        if orig_addr is None and not router:
            sending = [i for i in ifaces if i.role.can_send]
            if not sending:
                raise ScenarioError("INVALID_VALUE", f"node {name!r} has no sending interface", s.line)
            orig_addr = sending[0].addr
        spec = NodeSpec(name, ifaces, router=router, original_addr=orig_addr,
                        complementary_addr=comp_addr, processing_delay=delay)
        self.parts(variant, s.line).nodes.append(spec)

    def _node_addr(self, node: str, ref: tuple[str, int], variant: Optional[str]) -> IPv4Address:
        value, ln = ref
        addr = self.iface(node, value, variant)
        if addr is not None:
            return addr
        addr = parse_address(value, ln)
        if addr not in {a for (v, n, _), a in self.iface_addr.items() if n == node and v in (variant, None)}:
            raise ScenarioError("UNDECLARED_REFERENCE",
                                f"{value!r} is not an interface of node {node!r}", ln)
        return addr

    def _endpoint(self, value: str, ln: int, variant: Optional[str]) -> tuple[str, str]:
        if "." not in value:
            raise ScenarioError("PARSE_ERROR", f"expected NODE.IFACE, got {value!r}", ln)
        node, iface = value.split(".", 1)
        if not self.has_node(node, variant):
            raise ScenarioError("UNDECLARED_REFERENCE", f"undeclared node {node!r}", ln)
        if self.iface(node, iface, variant) is None:
            raise ScenarioError("UNDECLARED_REFERENCE", f"undeclared interface {value!r}", ln)
        return node, iface

    def link(self, s: _Section) -> None:
        vals: dict[str, tuple[str, int]] = {}
        for key, value, ln in s.items:
            vals[key] = (value, ln)
        for req in ("from", "to", "rate", "delay"):
            if req not in vals:
                raise ScenarioError("PARSE_ERROR", f"link {s.name!r} lacks {req!r}", s.line)
        variant = vals["variant"][0] if "variant" in vals else None
        parts = self.parts(variant, vals["variant"][1] if variant else s.line)
        src = self._endpoint(*vals["from"], variant)
        dst = self._endpoint(*vals["to"], variant)
        rate = self._positive(parse_rate(*vals["rate"]), *vals["rate"])
        delay = parse_time(*vals["delay"])
        loss = parse_probability(*vals["loss"]) if "loss" in vals else 0.0
        queue = self._int(*vals["queue"], lo=1) if "queue" in vals else self.default_queue
        duplex = parse_bool(*vals["duplex"]) if "duplex" in vals else False
        sweep = parse_bool(*vals["sweep"]) if "sweep" in vals else False
        specs = []
        if duplex:
            rate_rev = parse_rate(*vals["rate_rev"]) if "rate_rev" in vals else rate
            delay_rev = parse_time(*vals["delay_rev"]) if "delay_rev" in vals else delay
            loss_rev = parse_probability(*vals["loss_rev"]) if "loss_rev" in vals else loss
            specs.append(LinkSpec(f"{s.name}.fwd", *src, *dst, rate, delay, loss, queue))
            specs.append(LinkSpec(f"{s.name}.rev", *dst, *src, rate_rev, delay_rev, loss_rev, queue))
        else:
            for key in ("rate_rev", "delay_rev", "loss_rev"):
                if key in vals:
                    raise ScenarioError("PARSE_ERROR", f"{key} needs duplex = yes", vals[key][1])
            specs.append(LinkSpec(s.name, *src, *dst, rate, delay, loss, queue))
        known = {l.link_id for l in self.cfg.links}
        for v in self.cfg.variants.values():
            known |= {l.link_id for l in v.links}
        for spec in specs:
            if spec.link_id in known:
                raise ScenarioError("PARSE_ERROR", f"link {spec.link_id!r} declared twice", s.line)
            parts.links.append(spec)
            if sweep:
                parts.sweep_links.add(spec.link_id)

    def route(self, s: _Section) -> None:
        node = s.name
        found = s.get("variant")
        variant = found[0] if found else None
        parts = self.parts(variant, found[1] if found else s.line)
        if not self.has_node(node, variant):
            raise ScenarioError("UNDECLARED_REFERENCE", f"undeclared node {node!r}", s.line)
        entries = []
        for key, value, ln in s.items:
            if key == "variant":
                continue
            if "." in key and not key.replace(".", "").isdigit():
                n, i = self._endpoint(key, ln, variant)
                dest = self.iface(n, i, variant)
            else:
                dest = parse_address(key, ln)
            entries.append((dest, value, ln))
        links = {l.link_id for l in self.cfg.links} | {l.link_id for l in parts.links}
        for dest, link_id, ln in entries:
            if link_id not in links:
                raise ScenarioError("UNDECLARED_REFERENCE", f"undeclared link {link_id!r}", ln)
            parts.routes.append(RouteSpec(node, dest, link_id))

    def flow(self, s: _Section) -> None:
        vals = {k: (v, ln) for k, v, ln in s.items}
        for req in ("client", "server", "size"):
            if req not in vals:
                raise ScenarioError("PARSE_ERROR", f"flow {s.name!r} lacks {req!r}", s.line)
        for role in ("client", "server"):
            node, ln = vals[role]
            if not self.has_node(node):
                raise ScenarioError("UNDECLARED_REFERENCE", f"undeclared node {node!r}", ln)
        size = parse_size(*vals["size"])
        if size <= 0:
            raise ScenarioError("INVALID_VALUE", "transfer size must be positive", vals["size"][1])
        port = self._int(*vals["port"], lo=1, hi=65535) if "port" in vals else 80
        start = parse_time(*vals["start"]) if "start" in vals else 0.0
        direction = vals["direction"][0] if "direction" in vals else "upload"
        if direction not in ("upload", "download"):
            raise ScenarioError("INVALID_VALUE", f"direction {direction!r}", vals["direction"][1])
        self.cfg.flows.append(FlowSpec(s.name, vals["client"][0], vals["server"][0], port,
                                       size, start, direction))

    @staticmethod
    def _int(text: str, ln: int, lo: Optional[int] = None, hi: Optional[int] = None) -> int:
        try:
            value = int(text, 0)
        except ValueError:
            raise ScenarioError("INVALID_VALUE", f"bad integer {text!r}", ln) from None
        if lo is not None and value < lo or hi is not None and value > hi:
            raise ScenarioError("INVALID_VALUE", f"{text!r} out of range", ln)
        return value

    @staticmethod
    def _float(text: str, ln: int) -> float:
        try:
            return float(text)
        except ValueError:
            raise ScenarioError("INVALID_VALUE", f"bad number {text!r}", ln) from None

    @staticmethod
    def _positive(value: float, text: str, ln: int) -> float:
        if value <= 0:
            raise ScenarioError("INVALID_VALUE", f"{text!r} must be positive", ln)
        return value

    def _positive_size(self, text: str, ln: int) -> int:
        return int(self._positive(parse_size(text, ln), text, ln))


def parse_scenario(source: Union[str, Path]) -> ScenarioConfig:
    """Parse scenario text, a path to a file, or the name of a shipped scenario."""
    text = None
    if isinstance(source, Path):
        text = source.read_text()
    elif "\n" in source or "[" in source:
        text = source
    else:
        path = Path(source)
        if path.is_file():
            text = path.read_text()
        else:
            text = shipped_scenario_text(source)
    return _Builder(_lex(text)).build()


def shipped_scenarios() -> list[str]:
    root = resources.files("detcp") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def shipped_scenario_text(name: str) -> str:
    name = name[:-4] if name.endswith(".scn") else name
    path = resources.files("detcp") / "scenarios" / f"{name}.scn"
    if not path.is_file():
        raise ScenarioError("UNDECLARED_REFERENCE", f"no scenario file or shipped scenario {name!r}")
    return path.read_text()
