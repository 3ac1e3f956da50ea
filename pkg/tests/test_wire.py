import struct
from ipaddress import IPv4Address

import pytest
from hypothesis import given, settings, strategies as st

from detcp.wire import (HEADER_LEN, Envelope, OptionKind, Segment, SegmentFlags, SegmentOption,
                        WireError, compute_checksum, decode_segment, encode_segment)

SYN, ACK, FIN, RST = SegmentFlags.SYN, SegmentFlags.ACK, SegmentFlags.FIN, SegmentFlags.RST


def naive_checksum(data: bytes) -> int:
    """Textbook oracle: add 16-bit words with end-around carry, then invert."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for (word,) in struct.iter_unpack(">H", data):
        total += word
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def sack_blocks():
    def block(pair):
        left, length = pair
        return (left, (left + length) & 0xFFFFFFFF)
    pairs = st.tuples(st.integers(0, 2**32 - 1), st.integers(1, 2**31 - 1)).map(block)
    return st.lists(pairs, min_size=1, max_size=4)


options = st.one_of(
    st.builds(SegmentOption.complementary_addr, st.integers(0, 2**32 - 1).map(IPv4Address)),
    st.builds(SegmentOption.connection_id, st.integers(0, 2**64 - 1)),
    st.builds(SegmentOption.sack_blocks, sack_blocks()),
    st.builds(SegmentOption, st.integers(0x10, 0xFF), st.binary(max_size=12)),
)


@st.composite
def segments(draw):
    flags = SegmentFlags(draw(st.integers(0, 15)))
    payload = b"" if flags & SYN else draw(st.binary(max_size=1500))
    return Segment(
        flags=flags,
        source_port=draw(st.integers(0, 65535)),
        dest_port=draw(st.integers(0, 65535)),
        seq=draw(st.integers(0, 2**32 - 1)),
        ack=draw(st.integers(0, 2**32 - 1)) if flags & ACK else 0,
        window=draw(st.integers(0, 65535)),
        options=tuple(draw(st.lists(options, max_size=4))),
        payload=payload,
    )


class TestChecksum:
    def test_all_zero_input(self):
        assert compute_checksum(bytes(4)) == 0xFFFF

    def test_single_octet_is_padded(self):
        assert compute_checksum(b"\x01") == ~0x0100 & 0xFFFF == 0xFEFF

    def test_empty(self):
        assert compute_checksum(b"") == 0xFFFF

    @given(st.binary(max_size=2000))
    def test_matches_textbook_sum(self, data):
        # Both forms agree except for the ones-complement zero, which the
        # textbook loop can produce as either 0x0000 or 0xFFFF sum.
        ours, theirs = compute_checksum(data), naive_checksum(data)
        assert ours == theirs or {ours, theirs} == {0, 0xFFFF}

    @given(segments())
    def test_inserted_checksum_verifies(self, seg):
        raw = encode_segment(seg)
        stored = struct.unpack_from(">H", raw, 19)[0]
        assert compute_checksum(raw[:19] + b"\x00\x00" + raw[21:]) == stored


class TestEncode:
    def test_bare_syn_octets(self):
        raw = encode_segment(Segment(SYN, 5000, 80))
        assert len(raw) == HEADER_LEN == 21
        body = bytes([0x01, 0x01, 0x13, 0x88, 0x00, 0x50]) + bytes(8) + bytes(5)
        assert raw[:19] == body
        assert raw[19:21] == naive_checksum(body + b"\x00\x00").to_bytes(2, "big")

    def test_complementary_addr_tlv(self):
        seg = Segment(SYN, 5000, 80, options=(SegmentOption.complementary_addr(IPv4Address("10.0.1.2")),))
        raw = encode_segment(seg)
        assert raw[16] == 6  # options length
        assert raw[21:27] == bytes([0x01, 0x04, 0x0A, 0x00, 0x01, 0x02])

    def test_connection_id_tlv(self):
        seg = Segment(SYN, 1, 2, options=(SegmentOption.connection_id(0x0102030405060708),))
        assert encode_segment(seg)[21:] == bytes([0x02, 0x08, 1, 2, 3, 4, 5, 6, 7, 8])

    def test_full_data_segment_length(self):
        seg = Segment(ACK, 80, 40000, seq=1, ack=1, window=64, payload=bytes(1000))
        assert len(encode_segment(seg)) == 1021 == seg.wire_len

    @given(segments())
    def test_length_formula(self, seg):
        assert len(encode_segment(seg)) == HEADER_LEN + seg.options_len + len(seg.payload)

    def test_options_too_long(self):
        opts = tuple(SegmentOption(0x40, bytes(60)) for _ in range(5))
        with pytest.raises(WireError) as err:
            encode_segment(Segment(ACK, 1, 2, options=opts))
        assert err.value.code == "OPTIONS_TOO_LONG"

    def test_payload_too_long(self):
        with pytest.raises(WireError) as err:
            encode_segment(Segment(ACK, 1, 2, payload=bytes(65536)))
        assert err.value.code == "PAYLOAD_TOO_LONG"

    @pytest.mark.parametrize("seg", [
        Segment(SYN, 1, 2, payload=b"x"),
        Segment(SegmentFlags.NONE, 1, 2, ack=5),
        Segment(ACK, 70000, 2),
        Segment(ACK, 1, 2, seq=2**32),
    ])
    def test_invalid_segments(self, seg):
        with pytest.raises(WireError) as err:
            encode_segment(seg)
        assert err.value.code == "INVALID_SEGMENT"

    @pytest.mark.parametrize("opt", [
        SegmentOption(OptionKind.COMPLEMENTARY_ADDR, b"\x01\x02\x03"),
        SegmentOption(OptionKind.CONNECTION_ID, bytes(7)),
        SegmentOption(OptionKind.SACK_BLOCKS, b""),
        SegmentOption(OptionKind.SACK_BLOCKS, bytes(40)),
        SegmentOption.sack_blocks([(10, 5)]),
    ])
    def test_malformed_options(self, opt):
        with pytest.raises(WireError) as err:
            encode_segment(Segment(ACK, 1, 2, options=(opt,)))
        assert err.value.code == "MALFORMED_OPTION"

    def test_sack_block_across_wrap_is_valid(self):
        seg = Segment(ACK, 1, 2, options=(SegmentOption.sack_blocks([(2**32 - 10, 20)]),))
        assert decode_segment(encode_segment(seg)).sack == [(2**32 - 10, 20)]


class TestDecode:
    @settings(max_examples=300)
    @given(segments())
    def test_round_trip(self, seg):
        assert decode_segment(encode_segment(seg)) == seg

    def test_empty_is_truncated(self):
        with pytest.raises(WireError) as err:
            decode_segment(b"")
        assert err.value.code == "TRUNCATED"

    def test_flipped_payload_octet(self):
        raw = bytearray(encode_segment(Segment(ACK, 1, 2, payload=b"hello world")))
        raw[-3] ^= 0x20
        with pytest.raises(WireError) as err:
            decode_segment(bytes(raw))
        assert err.value.code == "BAD_CHECKSUM"

    def test_unknown_option_kept_opaque(self):
        # Hand-built encoding with option kind 0x7F and a 3-octet value.
        opts = bytes([0x7F, 0x03, 0xAA, 0xBB, 0xCC])
        head = struct.pack(">BBHHIIHBHH", 1, int(ACK), 7, 8, 100, 200, 3, len(opts), 2, 0)
        raw = bytearray(head + opts + b"hi")
        raw[19:21] = naive_checksum(bytes(raw)).to_bytes(2, "big")
        seg = decode_segment(bytes(raw))
        assert seg.options == (SegmentOption(0x7F, b"\xaa\xbb\xcc"),)
        assert seg.option(0x7F).decoded() == b"\xaa\xbb\xcc"
        assert seg.payload == b"hi" and seg.seq == 100 and seg.ack == 200

    def _forge(self, version=1, flags=int(ACK), opts=b"", payload=b"", opt_len=None,
               pay_len=None, tail=b""):
        head = struct.pack(">BBHHIIHBHH", version, flags, 1, 2, 0, 0, 0,
                           len(opts) if opt_len is None else opt_len,
                           len(payload) if pay_len is None else pay_len, 0)
        raw = bytearray(head + opts + payload + tail)
        raw[19:21] = compute_checksum(bytes(raw)).to_bytes(2, "big")
        return bytes(raw)

    @pytest.mark.parametrize("kwargs, code", [
        ({"version": 2}, "BAD_VERSION"),
        ({"flags": 0x12}, "INVALID_SEGMENT"),
        ({"payload": b"abc", "pay_len": 10}, "TRUNCATED"),
        ({"tail": b"zz"}, "TRAILING_DATA"),
        ({"opts": bytes([0x40, 0x09, 1, 2])}, "MALFORMED_OPTION"),
        ({"opts": bytes([0x40])}, "MALFORMED_OPTION"),
        ({"opts": bytes([0x01, 0x02, 1, 2])}, "MALFORMED_OPTION"),
    ])
    def test_structural_errors(self, kwargs, code):
        with pytest.raises(WireError) as err:
            decode_segment(self._forge(**kwargs))
        assert err.value.code == code

    @settings(max_examples=200)
    @given(segments(), st.data())
    def test_single_octet_corruption_detected(self, seg, data):
        raw = bytearray(encode_segment(seg))
        pos = data.draw(st.integers(0, len(raw) - 1))
        delta = data.draw(st.integers(1, 255))
        raw[pos] ^= delta
        with pytest.raises(WireError) as err:
            decode_segment(bytes(raw))
        assert err.value.code == "BAD_CHECKSUM"


class TestTypes:
    def test_flags_octet_values(self):
        assert (int(SYN), int(ACK), int(FIN), int(RST)) == (1, 2, 4, 8)
        assert str(SYN | ACK) == "SYN|ACK"

    def test_seq_len_counts_syn_and_fin(self):
        assert Segment(SYN, 1, 2).seq_len == 1
        assert Segment(FIN | ACK, 1, 2, payload=b"abc").seq_len == 4

    def test_typed_option_accessors(self):
        seg = Segment(SYN, 1, 2, options=(SegmentOption.complementary_addr(IPv4Address("1.2.3.4")),
                                          SegmentOption.connection_id(99)))
        assert seg.complementary_addr == IPv4Address("1.2.3.4")
        assert seg.conn_id == 99
        assert seg.sack == []

    def test_envelope_carries_addresses(self):
        env = Envelope(IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), Segment(ACK, 1, 2))
        assert str(env.src_addr) == "1.1.1.1" and env.segment.dest_port == 2
