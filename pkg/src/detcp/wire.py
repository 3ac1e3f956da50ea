"""Segment wire format for decoupled TCP.

Fixed 21-octet header, all fields big-endian::

     0        1        2                 4                 6
    +--------+--------+-----------------+-----------------+
    |version | flags  |   source port   |    dest port    |
    +--------+--------+-----------------+-----------------+
    |             sequence number (32)                    |
    +-----------------------------------------------------+
    |          acknowledgement number (32)                |
    +-----------------+--------+-----------------+--------+
    |  window (x1024) |optlen  |   payload len   |
    +-----------------+--------+-----------------+
    |    checksum     |  options (TLV) ...  | payload ...
    +-----------------+

Options are TLV encoded: kind (1 octet), length of value (1 octet), value.
The checksum is the 16-bit ones-complement of the ones-complement sum of the
whole encoding, computed with the checksum field set to zero. The field sits
at an odd offset, so a receiver verifies by zeroing it, recomputing and
comparing rather than by summing the encoding to zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum, IntFlag
from ipaddress import IPv4Address
from typing import Iterable, Optional

VERSION = 1
HEADER = struct.Struct(">BBHHIIHBHH")
HEADER_LEN = HEADER.size  # 21
CHECKSUM_OFFSET = 19
MAX_OPTIONS_LEN = 255
MAX_PAYLOAD_LEN = 65535
WINDOW_SCALE = 1024
SEQ_MASK = 0xFFFFFFFF
MAX_SACK_BLOCKS = 4

# Addresses are plain IPv4Address values; aliased for readability.
Address = IPv4Address


class WireError(ValueError):
    """Raised when a segment cannot be encoded or decoded.

    ``code`` is one of TRUNCATED, BAD_CHECKSUM, BAD_VERSION, MALFORMED_OPTION,
    TRAILING_DATA, OPTIONS_TOO_LONG, PAYLOAD_TOO_LONG, INVALID_SEGMENT.
    """

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class SegmentFlags(IntFlag):
    NONE = 0
    SYN = 0x01
    ACK = 0x02
    FIN = 0x04
    RST = 0x08

    def __str__(self) -> str:
        names = [f.name for f in (SegmentFlags.SYN, SegmentFlags.ACK,
                                  SegmentFlags.FIN, SegmentFlags.RST) if self & f]
        return "|".join(names) if names else "-"


class OptionKind(IntEnum):
    COMPLEMENTARY_ADDR = 0x01
    CONNECTION_ID = 0x02
    SACK_BLOCKS = 0x03


def _seq_before(a: int, b: int) -> bool:
    return ((a - b) & SEQ_MASK) >= 0x80000000


@dataclass(frozen=True, slots=True)
class SegmentOption:
    """One TLV option. ``kind`` may be any octet; unknown kinds stay opaque."""

    kind: int
    value: bytes

    @classmethod
    def complementary_addr(cls, addr: Address) -> "SegmentOption":
        return cls(OptionKind.COMPLEMENTARY_ADDR, IPv4Address(addr).packed)

    @classmethod
    def connection_id(cls, conn_id: int) -> "SegmentOption":
        return cls(OptionKind.CONNECTION_ID, conn_id.to_bytes(8, "big"))

    @classmethod
    def sack_blocks(cls, blocks: Iterable[tuple[int, int]]) -> "SegmentOption":
        return cls(OptionKind.SACK_BLOCKS,
                   b"".join(struct.pack(">II", left, right) for left, right in blocks))

    def validate(self) -> None:
        if not 0 <= self.kind <= 0xFF:
            raise WireError("MALFORMED_OPTION", f"kind {self.kind} out of range")
        n = len(self.value)
        if n > 0xFF:
            raise WireError("MALFORMED_OPTION", "option value longer than 255 octets")
        if self.kind == OptionKind.COMPLEMENTARY_ADDR and n != 4:
            raise WireError("MALFORMED_OPTION", "complementary address must be 4 octets")
        if self.kind == OptionKind.CONNECTION_ID and n != 8:
            raise WireError("MALFORMED_OPTION", "connection id must be 8 octets")
        if self.kind == OptionKind.SACK_BLOCKS:
            if n == 0 or n % 8 or n // 8 > MAX_SACK_BLOCKS:
                raise WireError("MALFORMED_OPTION", "SACK option must hold 1..4 blocks")
            for left, right in struct.iter_unpack(">II", self.value):
                if not _seq_before(left, right):
                    raise WireError("MALFORMED_OPTION", "SACK block with left >= right")

    def decoded(self):
        """Typed view of the value: Address, int, list of blocks, or raw bytes."""
        if self.kind == OptionKind.COMPLEMENTARY_ADDR:
            return IPv4Address(self.value)
        if self.kind == OptionKind.CONNECTION_ID:
            return int.from_bytes(self.value, "big")
        if self.kind == OptionKind.SACK_BLOCKS:
            return list(struct.iter_unpack(">II", self.value))
        return self.value


@dataclass(frozen=True, slots=True)
class Segment:
    flags: SegmentFlags
    source_port: int
    dest_port: int
    seq: int = 0
    ack: int = 0
    window: int = 0
    options: tuple[SegmentOption, ...] = ()
    payload: bytes = b""
    version: int = VERSION

    def has(self, flag: SegmentFlags) -> bool:
        return bool(self.flags & flag)

    def option(self, kind: int) -> Optional[SegmentOption]:
        for opt in self.options:
            if opt.kind == kind:
                return opt
        return None

    @property
    def conn_id(self) -> Optional[int]:
        opt = self.option(OptionKind.CONNECTION_ID)
        return None if opt is None else int.from_bytes(opt.value, "big")

    @property
    def complementary_addr(self) -> Optional[Address]:
        opt = self.option(OptionKind.COMPLEMENTARY_ADDR)
        return None if opt is None else IPv4Address(opt.value)

    @property
    def sack(self) -> list[tuple[int, int]]:
        opt = self.option(OptionKind.SACK_BLOCKS)
        return [] if opt is None else list(struct.iter_unpack(">II", opt.value))

    @property
    def seq_len(self) -> int:
        """Sequence space consumed: payload plus one each for SYN and FIN."""
        return (len(self.payload) + (1 if self.flags & SegmentFlags.SYN else 0)
                + (1 if self.flags & SegmentFlags.FIN else 0))

    @property
    def options_len(self) -> int:
        return sum(2 + len(o.value) for o in self.options)

    @property
    def wire_len(self) -> int:
        return HEADER_LEN + self.options_len + len(self.payload)

    def summary(self) -> str:
        kinds = ",".join(f"{o.kind:02x}" for o in self.options) or "-"
        return (f"{self.flags} seq={self.seq} ack={self.ack} "
                f"len={len(self.payload)} opts={kinds}")


@dataclass(frozen=True, slots=True)
class Envelope:
    """Simulated network-layer wrapper: per-hop addressing around a segment."""

    src_addr: Address
    dst_addr: Address
    segment: Segment = field(repr=False)


def compute_checksum(data: bytes) -> int:
    """Ones-complement of the 16-bit ones-complement sum of ``data``.

    Words are big-endian; an odd trailing octet is padded with zero. Uses the
    identity 2**16 == 1 (mod 0xFFFF), so the folded sum equals the big-endian
    integer value reduced mod 0xFFFF, with a nonzero multiple folding to 0xFFFF.
    """
    if len(data) & 1:
        data = bytes(data) + b"\x00"
    value = int.from_bytes(data, "big")
    folded = value % 0xFFFF
    if folded == 0 and value:
        folded = 0xFFFF
    return ~folded & 0xFFFF


def _check_segment(seg: Segment) -> None:
    if seg.version != VERSION:
        raise WireError("INVALID_SEGMENT", f"version {seg.version}")
    if int(seg.flags) & ~0x0F:
        raise WireError("INVALID_SEGMENT", "reserved flag bits set")
    for name in ("source_port", "dest_port", "window"):
        if not 0 <= getattr(seg, name) <= 0xFFFF:
            raise WireError("INVALID_SEGMENT", f"{name} out of range")
    for name in ("seq", "ack"):
        if not 0 <= getattr(seg, name) <= SEQ_MASK:
            raise WireError("INVALID_SEGMENT", f"{name} out of range")
    if not seg.flags & SegmentFlags.ACK and seg.ack != 0:
        raise WireError("INVALID_SEGMENT", "ack number set without ACK flag")
    if seg.flags & SegmentFlags.SYN and seg.payload:
        raise WireError("INVALID_SEGMENT", "SYN carries payload")


def encode_segment(seg: Segment) -> bytes:
    _check_segment(seg)
    for opt in seg.options:
        opt.validate()
    opts = b"".join(bytes((opt.kind, len(opt.value))) + opt.value for opt in seg.options)
    if len(opts) > MAX_OPTIONS_LEN:
        raise WireError("OPTIONS_TOO_LONG", f"{len(opts)} octets of options")
    if len(seg.payload) > MAX_PAYLOAD_LEN:
        raise WireError("PAYLOAD_TOO_LONG", f"{len(seg.payload)} octets of payload")
    header = HEADER.pack(seg.version, int(seg.flags), seg.source_port, seg.dest_port,
                         seg.seq, seg.ack, seg.window, len(opts), len(seg.payload), 0)
    raw = bytearray(header + opts + seg.payload)
    csum = compute_checksum(raw)
    raw[CHECKSUM_OFFSET] = csum >> 8
    raw[CHECKSUM_OFFSET + 1] = csum & 0xFF
    return bytes(raw)


def decode_segment(data: bytes) -> Segment:
    """Parse and verify an encoding produced by :func:`encode_segment`.

    The checksum is verified over the entire input before any length field is
    trusted, so every single-octet corruption surfaces as BAD_CHECKSUM.
    """
    if len(data) < HEADER_LEN:
        raise WireError("TRUNCATED", f"{len(data)} octets, header needs {HEADER_LEN}")
    stored = (data[CHECKSUM_OFFSET] << 8) | data[CHECKSUM_OFFSET + 1]
    if compute_checksum(data[:CHECKSUM_OFFSET] + b"\x00\x00" + data[CHECKSUM_OFFSET + 2:]) != stored:
        raise WireError("BAD_CHECKSUM")
    (version, flags, sport, dport, seq, ack, window,
     opt_len, pay_len, _csum) = HEADER.unpack_from(data)
    if version != VERSION:
        raise WireError("BAD_VERSION", f"version {version}")
    if flags & 0xF0:
        raise WireError("INVALID_SEGMENT", f"reserved flag bits 0x{flags:02x}")
    total = HEADER_LEN + opt_len + pay_len
    if len(data) < total:
        raise WireError("TRUNCATED", f"{len(data)} octets, declared {total}")
    if len(data) > total:
        raise WireError("TRAILING_DATA", f"{len(data) - total} octets past declared end")

    options = []
    pos, end = HEADER_LEN, HEADER_LEN + opt_len
    while pos < end:
        if pos + 2 > end:
            raise WireError("MALFORMED_OPTION", "option header overruns options region")
        kind, length = data[pos], data[pos + 1]
        if pos + 2 + length > end:
            raise WireError("MALFORMED_OPTION", f"option 0x{kind:02x} overruns options region")
        opt = SegmentOption(kind, bytes(data[pos + 2:pos + 2 + length]))
        opt.validate()
        options.append(opt)
        pos += 2 + length

    return Segment(flags=SegmentFlags(flags), source_port=sport, dest_port=dport,
                   seq=seq, ack=ack, window=window, options=tuple(options),
                   payload=bytes(data[end:total]), version=version)
