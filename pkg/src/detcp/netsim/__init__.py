"""Discrete-event simulation of simplex links, routers and endpoints."""

from .link import SimplexLink, derive_seed
from .sim import EventKind, SimError, Simulation
from .topology import (InterfaceSpec, LinkSpec, NodeSpec, RouteSpec, Topology, TopologyError,
                       build_topology, find_path)
from .trace import COLUMNS, Disposition, TraceRecord, format_trace

__all__ = [
    "COLUMNS", "Disposition", "EventKind", "InterfaceSpec", "LinkSpec", "NodeSpec", "RouteSpec",
    "SimError", "SimplexLink", "Simulation", "Topology", "TopologyError", "TraceRecord",
    "build_topology", "derive_seed", "find_path", "format_trace",
]
