"""Endpoint addressing: interface roles, per-node configuration, six-tuples."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address
from typing import Optional

from ..wire import Address


class EndpointError(Exception):
    """Application-visible endpoint failure; ``code`` names the condition.

    Codes: PORT_IN_USE, NO_SEND_INTERFACE, NOT_ESTABLISHED, SEND_BUFFER_FULL,
    ALREADY_CLOSING, INVALID_CONFIG.
    """

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class InterfaceRole(Enum):
    DUPLEX = "duplex"
    SEND_ONLY = "send"
    RECEIVE_ONLY = "receive"

    @property
    def can_send(self) -> bool:
        return self is not InterfaceRole.RECEIVE_ONLY

    @property
    def can_receive(self) -> bool:
        return self is not InterfaceRole.SEND_ONLY


@dataclass(frozen=True)
class Interface:
    interface_id: str
    addr: Address
    role: InterfaceRole


@dataclass
class EndpointConfig:
    """What the kernel configuration file would hold for one host.

    ``original_addr`` is the address this host sends from. ``complementary_addr``
    is the address of its other-direction (receiving) interface; None means the
    host is single-duplex and receives on its original address too.
    """

    interfaces: list[Interface]
    original_addr: Address
    complementary_addr: Optional[Address] = None
    listen_ports: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.original_addr = IPv4Address(self.original_addr)
        if self.complementary_addr is not None:
            self.complementary_addr = IPv4Address(self.complementary_addr)
        ids = [i.interface_id for i in self.interfaces]
        if len(set(ids)) != len(ids):
            raise EndpointError("INVALID_CONFIG", "duplicate interface id")
        orig = self.interface_for(self.original_addr)
        if orig is None:
            raise EndpointError("INVALID_CONFIG",
                                f"original address {self.original_addr} has no interface")
        if self.complementary_addr is not None:
            comp = self.interface_for(self.complementary_addr)
            if comp is None:
                raise EndpointError("INVALID_CONFIG",
                                    f"complementary address {self.complementary_addr} has no interface")
            if comp.interface_id == orig.interface_id:
                raise EndpointError("INVALID_CONFIG",
                                    "complementary address must be on a different interface")
            if not comp.role.can_receive:
                raise EndpointError("INVALID_CONFIG",
                                    "complementary interface cannot receive")

    def interface_for(self, addr: Address) -> Optional[Interface]:
        for iface in self.interfaces:
            if iface.addr == addr:
                return iface
        return None

    def interface(self, interface_id: str) -> Interface:
        for iface in self.interfaces:
            if iface.interface_id == interface_id:
                return iface
        raise KeyError(interface_id)

    @property
    def receive_addr(self) -> Address:
        return self.complementary_addr if self.complementary_addr is not None else self.original_addr

    @property
    def addresses(self) -> frozenset[Address]:
        return frozenset(i.addr for i in self.interfaces)


@dataclass
class SixTuple:
    """Decoupled connection identity, oriented from the local host.

    ``orig_src``/``comp_src`` are this host's sending and receiving addresses;
    ``orig_dst`` is where we send to (the peer's receiving address) and
    ``comp_dst`` is where the peer sends from. The peer holds the mirror image.
    A None complementary field means that direction is coupled with the other.
    """

    orig_src: Address
    comp_src: Optional[Address]
    src_port: int
    orig_dst: Address
    comp_dst: Optional[Address]
    dst_port: int

    @property
    def four_tuple(self) -> tuple[Address, int, Address, int]:
        return (self.orig_src, self.src_port, self.orig_dst, self.dst_port)

    @property
    def local_receive(self) -> Address:
        return self.comp_src if self.comp_src is not None else self.orig_src

    @property
    def remote_send(self) -> Address:
        return self.comp_dst if self.comp_dst is not None else self.orig_dst

    def mirrored(self) -> "SixTuple":
        """The same connection as the peer sees it."""
        return SixTuple(orig_src=self.remote_send, comp_src=self._opt(self.orig_dst, self.remote_send),
                        src_port=self.dst_port, orig_dst=self.local_receive,
                        comp_dst=self._opt(self.orig_src, self.local_receive),
                        dst_port=self.src_port)

    @staticmethod
    def _opt(addr: Address, other: Address) -> Optional[Address]:
        return None if addr == other else addr
