import random
from ipaddress import IPv4Address

import pytest

from detcp.endpoint import (ArmTimer, ConnEvent, ConnParams, ConnState, Emit, Endpoint,
                            EndpointConfig, EndpointError, Interface, InterfaceRole, SixTuple,
                            TimerKind)
from detcp.wire import Envelope, Segment, SegmentFlags, SegmentOption

from helpers import (CLIENT_RX, CLIENT_TX, SERVER_RX, SERVER_TX, Wire, duplex_config,
                     handshake, make_pair)

SYN, ACK, FIN, RST = SegmentFlags.SYN, SegmentFlags.ACK, SegmentFlags.FIN, SegmentFlags.RST


def emits(actions):
    return [a for a in actions if isinstance(a, Emit)]


def established(**kw):
    client, server = make_pair(**kw)
    wire = Wire(client, server)
    c, s = handshake(client, server, wire)
    return client, server, wire, c, s


class TestOpen:
    def test_syn_carries_both_options_from_send_interface(self):
        client, _ = make_pair()
        conn, actions = client.open_active(40000, SERVER_RX, 80, 0.0)
        (emit,) = emits(actions)
        seg = emit.envelope.segment
        assert emit.interface_id == "tx"
        assert emit.envelope.src_addr == CLIENT_TX and emit.envelope.dst_addr == SERVER_RX
        assert seg.flags == SYN
        assert seg.complementary_addr == CLIENT_RX
        assert seg.conn_id == conn.conn_id is not None
        assert conn.state is ConnState.SYN_SENT
        assert any(isinstance(a, ArmTimer) and a.kind is TimerKind.RTO for a in actions)

    def test_syn_ack_echoes_id_and_offers_server_address(self):
        client, server = make_pair()
        server.open_passive(80)
        conn, actions = client.open_active(40000, SERVER_RX, 80, 0.0)
        syn = emits(actions)[0].envelope
        out = server.on_segment("rx", syn, 0.01)
        (emit,) = emits(out)
        seg = emit.envelope.segment
        assert seg.flags == SYN | ACK
        assert seg.complementary_addr == SERVER_RX
        assert seg.conn_id == conn.conn_id
        assert emit.envelope.dst_addr == CLIENT_RX and emit.interface_id == "tx"
        assert server.connections[0].state is ConnState.SYN_RCVD

    def test_three_segment_open_and_six_tuples(self):
        client, server, wire, c, s = established()
        flags = [seg.flags for seg in wire.segments()]
        assert flags[:3] == [SYN, SYN | ACK, ACK]
        assert c.six_tuple == SixTuple(CLIENT_TX, CLIENT_RX, 40000, SERVER_RX, SERVER_TX, 80)
        assert c.six_tuple.mirrored() == s.six_tuple
        assert wire.signals["client"] == [ConnEvent.ESTABLISHED]
        assert wire.signals["server"] == [ConnEvent.ESTABLISHED]

    def test_iss_from_seeded_rng(self):
        a, _ = make_pair(seed=5)
        b, _ = make_pair(seed=5)
        ca, _ = a.open_active(40000, SERVER_RX, 80, 0.0)
        cb, _ = b.open_active(40000, SERVER_RX, 80, 0.0)
        assert (ca.iss, ca.conn_id) == (cb.iss, cb.conn_id)

    def test_no_send_interface(self):
        cfg = EndpointConfig([Interface("rx", IPv4Address("10.0.0.1"), InterfaceRole.RECEIVE_ONLY)],
                             original_addr=IPv4Address("10.0.0.1"))
        ep = Endpoint("deaf", cfg)
        with pytest.raises(EndpointError) as err:
            ep.open_active(1, "10.0.0.2", 80, 0.0)
        assert err.value.code == "NO_SEND_INTERFACE"
        with pytest.raises(EndpointError) as err:
            ep.select_egress_interface(None)
        assert err.value.code == "NO_SEND_INTERFACE"

    def test_port_in_use(self):
        client, server = make_pair()
        client.open_active(40000, SERVER_RX, 80, 0.0)
        with pytest.raises(EndpointError) as err:
            client.open_active(40000, SERVER_RX, 80, 0.0)
        assert err.value.code == "PORT_IN_USE"
        server.open_passive(80)
        with pytest.raises(EndpointError) as err:
            server.open_passive(80)
        assert err.value.code == "PORT_IN_USE"

    def test_syn_to_closed_port_gets_rst(self):
        client, server = make_pair()
        _, actions = client.open_active(40000, SERVER_RX, 81, 0.0)
        out = emits(server.on_segment("rx", emits(actions)[0].envelope, 0.01))
        assert len(out) == 1 and out[0].envelope.segment.flags & RST
        assert server.stats["not_found"] == 1 and server.stats["rst_sent"] == 1

    def test_rst_aborts_syn_sent(self):
        client, server = make_pair()
        wire = Wire(client, server)
        conn, actions = client.open_active(40000, SERVER_RX, 81, 0.0)
        wire.feed("client", actions)
        wire.run()
        assert conn.state is ConnState.CLOSED
        assert wire.signals["client"] == [ConnEvent.RESET]

    def test_lost_syn_is_retried_then_abandoned(self):
        client, server = make_pair()
        wire = Wire(client, server)
        wire.drop = lambda env: True
        conn, actions = client.open_active(40000, SERVER_RX, 80, 0.0)
        wire.feed("client", actions)
        wire.run(until=1000)
        syns = [seg for seg in wire.segments("client") if seg.flags & SYN]
        assert len(syns) == 7
        assert conn.state is ConnState.CLOSED
        assert wire.signals["client"] == [ConnEvent.RESET]

    def test_duplex_peer_degrades_to_four_tuple(self):
        client = Endpoint("client", duplex_config("10.0.0.1"), seed=1)
        server = Endpoint("server", duplex_config("10.0.0.2"), seed=2)
        wire = Wire(client, server)
        server.open_passive(80)
        conn, actions = client.open_active(40000, "10.0.0.2", 80, 0.0)
        assert emits(actions)[0].interface_id == "eth"
        assert emits(actions)[0].envelope.segment.complementary_addr is None
        wire.feed("client", actions)
        wire.run(until=1)
        assert conn.state is ConnState.ESTABLISHED
        assert conn.six_tuple.comp_src is None and conn.six_tuple.comp_dst is None
        assert server.connections[0].six_tuple.mirrored() == conn.six_tuple


class TestDemux:
    def _data_from_server(self, s, src, with_id=True, ports=None):
        sport, dport = ports or (s.local_port, s.remote_port)
        opts = (SegmentOption.connection_id(s.conn_id),) if with_id else ()
        seg = Segment(ACK, sport, dport, seq=s.sender.snd_nxt & 0xFFFFFFFF,
                      ack=s.receiver.rcv_nxt & 0xFFFFFFFF, window=64, options=opts)
        return Envelope(src, CLIENT_RX, seg)

    def test_connection_id_step(self):
        client, server, wire, c, s = established()
        match = client.demultiplex(self._data_from_server(s, SERVER_TX))
        assert match.target is c and match.step == 1

    def test_four_tuple_step(self):
        client, server, wire, c, s = established()
        match = client.demultiplex(self._data_from_server(s, SERVER_TX, with_id=False))
        assert match.target is c and match.step == 2

    def test_complementary_address_step(self):
        client, server, wire, c, s = established()
        env = self._data_from_server(s, SERVER_TX, with_id=False)
        env = Envelope(env.src_addr, CLIENT_TX, env.segment)
        match = client.demultiplex(env)
        assert match.target is c and match.step == 3

    def test_listener_step(self):
        client, server = make_pair()
        server.open_passive(80)
        _, actions = client.open_active(40000, SERVER_RX, 80, 0.0)
        match = server.demultiplex(emits(actions)[0].envelope)
        assert match.step == 4 and match.target.state is ConnState.LISTEN

    def test_stray_segment_not_found_and_reset(self):
        client, server, wire, c, s = established()
        env = self._data_from_server(s, IPv4Address("10.9.9.9"), with_id=False, ports=(7, 9))
        assert client.demultiplex(env) is None
        out = emits(client.on_segment("rx", env, wire.now))
        assert out[0].envelope.segment.flags & RST
        assert client.stats["not_found"] == 1

    def test_rst_is_never_answered(self):
        client, _ = make_pair()
        env = Envelope(SERVER_TX, CLIENT_RX, Segment(RST, 7, 9))
        assert emits(client.on_segment("rx", env, 0.0)) == []

    def test_id_wins_over_conflicting_tuple(self):
        client, server = make_pair()
        wire = Wire(client, server)
        server.open_passive(80)
        server.open_passive(81)
        c1, a1 = client.open_active(40000, SERVER_RX, 80, 0.0)
        c2, a2 = client.open_active(40001, SERVER_RX, 81, 0.0)
        wire.feed("client", a1 + a2)
        wire.run(until=1)
        s2 = next(x for x in server.connections if x.local_port == 81)
        # Ports and tuple say c1, the id says c2: the id must not match
        # across ports, so the tuple decides.
        env = self._data_from_server(s2, SERVER_TX, ports=(80, 40000))
        assert client.demultiplex(env).target is c1
        # Same ports, id of the connection the tuple also names: no conflict.
        assert client.stats["demux_conflicts"] == 0
        # Re-key c1 under c2's tuple to force a disagreement.
        client.by_in[(CLIENT_RX, 40001, SERVER_TX, 81)] = c1
        env = self._data_from_server(s2, SERVER_TX, with_id=True)
        assert client.demultiplex(env).target is c2
        assert client.stats["demux_conflicts"] == 1

    def test_send_only_interface_never_delivers(self):
        client, server, wire, c, s = established()
        env = self._data_from_server(s, SERVER_TX)
        assert client.on_segment("tx", env, wire.now) == []
        assert client.stats["wrong_direction"] == 1


class TestTransfer:
    def test_segmentation(self):
        client, server, wire, c, s = established()
        out = emits(client.send_data(c, bytes(3000), wire.now))
        seqs = [e.envelope.segment.seq for e in out]
        assert len(out) == 3
        assert [b - a for a, b in zip(seqs, seqs[1:])] == [1000, 1000]
        assert all(len(e.envelope.segment.payload) == 1000 and e.interface_id == "tx" for e in out)

    def test_send_errors(self):
        client, server = make_pair(params=ConnParams(send_buffer=2000))
        conn, _ = client.open_active(40000, SERVER_RX, 80, 0.0)
        with pytest.raises(EndpointError) as err:
            client.send_data(conn, b"x", 0.0)
        assert err.value.code == "NOT_ESTABLISHED"
        wire = Wire(client, server)
        c, s = handshake(client, server, wire, client_port=40001)
        with pytest.raises(EndpointError) as err:
            client.send_data(c, bytes(2001), wire.now)
        assert err.value.code == "SEND_BUFFER_FULL"

    def test_zero_peer_window_arms_persist(self):
        client, server, wire, c, s = established()
        c.sender.peer_window = 0
        actions = client.send_data(c, bytes(3000), wire.now)
        assert emits(actions) == []
        assert any(isinstance(a, ArmTimer) and a.kind is TimerKind.PERSIST for a in actions)
        probe = emits(client.on_tick(c.persist_at))
        assert len(probe) == 1 and len(probe[0].envelope.segment.payload) == 1

    def test_in_order_data_is_delivered_and_acked_on_reverse_path(self):
        client, server, wire, c, s = established()
        wire.feed("client", client.send_data(c, b"a" * 2000, wire.now))
        wire.run(until=wire.now + 0.5)
        assert bytes(wire.delivered["server"]) == b"a" * 2000
        acks = [(n, i, env) for _, n, i, env in wire.log[3:] if n == "server"]
        assert acks and all(i == "tx" and env.dst_addr == CLIENT_RX for n, i, env in acks)

    def test_delayed_ack_timing(self):
        client, server, wire, c, s = established()
        start = len(wire.log)
        wire.feed("client", client.send_data(c, bytes(1000), wire.now))
        wire.run(until=wire.now + 1)
        ack_times = [t for t, n, _, _ in wire.log[start:] if n == "server"]
        sent = wire.log[start][0]
        assert ack_times[0] == pytest.approx(sent + 0.01 + 0.05)

    def test_every_second_segment_acked_immediately(self):
        client, server, wire, c, s = established()
        start = len(wire.log)
        wire.feed("client", client.send_data(c, bytes(2000), wire.now))
        wire.run(until=wire.now + 1)
        server_acks = [(t, env) for t, n, _, env in wire.log[start:] if n == "server"]
        assert server_acks[0][0] == pytest.approx(wire.log[start][0] + 0.01)
        assert server_acks[0][1].segment.ack == (s.irs + 2001) & 0xFFFFFFFF

    def test_fast_retransmit_exactly_once(self):
        client, server, wire, c, s = established()
        first = c.sender.snd_nxt
        dropped = []

        def drop(env):
            seg = env.segment
            if seg.payload and seg.seq == first and not dropped:
                dropped.append(seg)
                return True
            return False

        wire.drop = drop
        wire.feed("client", client.send_data(c, bytes(6000), wire.now))
        wire.run(until=wire.now + 0.15)
        resent = [seg for seg in wire.segments("client") if seg.payload and seg.seq == first]
        assert len(resent) == 2
        assert c.sender.rto_retransmits == 0
        dups = [seg for seg in wire.segments("server") if seg.ack == first]
        assert len(dups) >= 3
        assert bytes(wire.delivered["server"]) == bytes(6000)

    def test_rto_retransmits_una_and_doubles(self):
        client, server, wire, c, s = established()
        wire.drop = lambda env: bool(env.segment.payload)
        wire.feed("client", client.send_data(c, bytes(1000), wire.now))
        # The first deadline is a tail probe; it does not back off.
        rto_before = c.rtt.rto
        assert c.probe_due
        client.on_tick(c.rto_at)
        assert c.rtt.rto == rto_before and c.sender.tail_probes == 1
        deadline = c.rto_at
        out = emits(client.on_tick(deadline))
        assert len(out) == 1 and out[0].envelope.segment.seq == (c.iss + 1) & 0xFFFFFFFF
        assert c.rtt.rto == pytest.approx(min(2 * rto_before, 60.0))
        client.on_tick(c.rto_at)
        assert c.rtt.rto == pytest.approx(min(4 * rto_before, 60.0))

    def test_rto_caps_at_sixty_seconds(self):
        client, server, wire, c, s = established()
        wire.drop = lambda env: bool(env.segment.payload)
        client.send_data(c, bytes(1000), wire.now)
        for _ in range(12):
            client.on_tick(c.rto_at)
        assert c.rtt.rto == 60.0

    def test_no_timers_no_actions(self):
        client, _ = make_pair()
        assert client.on_tick(5.0) == []

    def test_karn_skips_retransmitted_samples(self):
        client, server, wire, c, s = established()
        first = c.sender.snd_nxt
        seen = []
        wire.drop = lambda env: env.segment.seq == first and env.segment.payload and not seen.append(1) and len(seen) == 1
        samples = []
        observe = c.rtt.observe
        c.rtt.observe = lambda r: (samples.append(r), observe(r))
        wire.feed("client", client.send_data(c, bytes(5000), wire.now))
        wire.run(until=wire.now + 1)
        assert c.sender.karn_skips >= 1
        assert all(r == pytest.approx(0.02) or r == pytest.approx(0.07) for r in samples)

    def test_loss_heavy_transfer_across_sequence_wrap(self):
        iss = 2**32 - 5000
        client, server, wire, c, s = established(client_iss=iss, server_iss=iss)
        rng = random.Random(4)
        wire.drop = lambda env: rng.random() < 0.1
        data = random.Random(9).randbytes(60_000)
        wire.feed("client", client.send_data(c, data, wire.now))
        wire.run(until=120, stop=lambda: len(wire.delivered["server"]) == len(data))
        assert bytes(wire.delivered["server"]) == data
        seqs = [seg.seq for seg in wire.segments("client") if seg.payload]
        assert min(seqs) < 5000 < max(seqs)


class TestClose:
    def test_four_segment_close(self):
        client, server, wire, c, s = established()
        start = len(wire.log)
        wire.feed("client", client.close_connection(c, wire.now))
        wire.run(until=wire.now + 0.2)
        assert c.state is ConnState.FIN_WAIT_2 and s.state is ConnState.CLOSE_WAIT
        wire.feed("server", server.close_connection(s, wire.now))
        wire.run(until=wire.now + 0.2)
        close = [(n, i, env.segment.flags) for _, n, i, env in wire.log[start:]]
        assert close == [("client", "tx", FIN | ACK), ("server", "tx", ACK),
                         ("server", "tx", FIN | ACK), ("client", "tx", ACK)]
        assert s.state is ConnState.CLOSED and c.state is ConnState.TIME_WAIT
        assert wire.signals["server"][-2:] == [ConnEvent.PEER_CLOSED, ConnEvent.CLOSED]
        wire.run(until=wire.now + 11)
        assert c.state is ConnState.CLOSED
        assert wire.signals["client"][-1] is ConnEvent.CLOSED
        assert [(t.before, t.after) for t in c.transitions] == [
            (ConnState.CLOSED, ConnState.SYN_SENT), (ConnState.SYN_SENT, ConnState.ESTABLISHED),
            (ConnState.ESTABLISHED, ConnState.FIN_WAIT_1),
            (ConnState.FIN_WAIT_1, ConnState.FIN_WAIT_2),
            (ConnState.FIN_WAIT_2, ConnState.TIME_WAIT), (ConnState.TIME_WAIT, ConnState.CLOSED)]

    def test_time_wait_lasts_two_msl(self):
        client, server, wire, c, s = established()
        wire.feed("client", client.close_connection(c, wire.now))
        wire.run(until=wire.now + 0.2)
        wire.feed("server", server.close_connection(s, wire.now))
        wire.run(stop=lambda: c.state is ConnState.TIME_WAIT)
        entered = c.transitions[-1].time
        wire.run(until=100)
        assert c.transitions[-1].time == pytest.approx(entered + 10.0)

    def test_simultaneous_close_goes_through_closing(self):
        client, server, wire, c, s = established()
        wire.feed("client", client.close_connection(c, wire.now))
        wire.feed("server", server.close_connection(s, wire.now))
        wire.run(stop=lambda: c.state is ConnState.TIME_WAIT and s.state is ConnState.TIME_WAIT)
        for conn in (c, s):
            assert [t.after for t in conn.transitions][-3:] == [
                ConnState.FIN_WAIT_1, ConnState.CLOSING, ConnState.TIME_WAIT]

    def test_close_errors(self):
        client, server, wire, c, s = established()
        wire.feed("client", client.close_connection(c, wire.now))
        with pytest.raises(EndpointError) as err:
            client.close_connection(c, wire.now)
        assert err.value.code == "ALREADY_CLOSING"
        wire.run(until=100)
        with pytest.raises(EndpointError) as err:
            client.close_connection(c, wire.now)
        assert err.value.code == "ALREADY_CLOSING"

    def test_fin_waits_for_buffered_data(self):
        client, server, wire, c, s = established(params=ConnParams(send_window=2000))
        wire.feed("client", client.send_data(c, bytes(5000), wire.now))
        wire.feed("client", client.close_connection(c, wire.now))
        wire.run(until=wire.now + 2)
        assert len(wire.delivered["server"]) == 5000
        fins = [seg for seg in wire.segments("client") if seg.flags & FIN]
        assert fins[0].seq == (c.iss + 1 + 5000) & 0xFFFFFFFF
