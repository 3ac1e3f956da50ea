"""Sliding-window reliability: RTT estimation, sender scoreboard, reassembly.

All sequence numbers in this module are unbounded integers; the connection
converts to and from the 32-bit wire representation.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import deque
from enum import Enum
from typing import Optional

DUPTHRESH = 3
MAX_SACK_BLOCKS = 4


def _right(iv: list[int]) -> int:
    return iv[1]


def uncovered(intervals: list[list[int]], left: int, right: int) -> list[tuple[int, int]]:
    """Parts of [left, right) not covered by the sorted, merged ``intervals``."""
    out = []
    i = bisect_right(intervals, left, key=_right)
    cur = left
    while i < len(intervals) and intervals[i][0] < right:
        lo, hi = intervals[i]
        if lo > cur:
            out.append((cur, lo))
        cur = max(cur, hi)
        i += 1
    if cur < right:
        out.append((cur, right))
    return out


def merge_interval(intervals: list[list[int]], left: int, right: int) -> int:
    """Insert [left, right) into sorted, merged ``intervals``; return its index."""
    i = bisect_left(intervals, left, key=_right)
    j = i
    while j < len(intervals) and intervals[j][0] <= right:
        left = min(left, intervals[j][0])
        right = max(right, intervals[j][1])
        j += 1
    intervals[i:j] = [[left, right]]
    return i


def trim_below(intervals: list[list[int]], point: int) -> None:
    """Drop coverage below ``point``."""
    k = 0
    while k < len(intervals) and intervals[k][1] <= point:
        k += 1
    if k:
        del intervals[:k]
    if intervals and intervals[0][0] < point:
        intervals[0][0] = point


class RttEstimator:
    """Jacobson/Karels smoothed RTT with exponential backoff."""

    def __init__(self, initial_rto: float = 1.0, min_rto: float = 0.2, max_rto: float = 60.0):
        self.srtt: Optional[float] = None
        self.rttvar: Optional[float] = None
        self.rto = initial_rto
        self.min_rto = min_rto
        self.max_rto = max_rto
        self.samples = 0
        self.min = float("inf")
        self.max = 0.0
        self.total = 0.0

    def observe(self, r: float) -> None:
        if self.srtt is None:
            self.srtt = r
            self.rttvar = r / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        self.rto = min(self.max_rto, max(self.min_rto, self.srtt + 4 * self.rttvar))
        self.samples += 1
        self.total += r
        self.min = min(self.min, r)
        self.max = max(self.max, r)

    def backoff(self) -> None:
        self.rto = min(2 * self.rto, self.max_rto)

    @property
    def mean(self) -> float:
        return self.total / self.samples if self.samples else 0.0


class Sent:
    """One transmitted range of sequence space awaiting acknowledgement."""

    __slots__ = ("start", "end", "sent_at", "retransmits", "sacked", "lost",
                 "in_pipe", "fin", "mark")

    def __init__(self, start: int, end: int, sent_at: float, fin: bool = False):
        self.start = start
        self.end = end
        self.sent_at = sent_at
        self.retransmits = 0
        self.sacked = False
        self.lost = False
        self.in_pipe = True
        self.fin = fin
        self.mark = 0

    def __repr__(self) -> str:
        return (f"Sent({self.start}-{self.end} rtx={self.retransmits} "
                f"sacked={self.sacked} lost={self.lost})")


class Sender:
    """Send buffer plus SACK scoreboard.

    The fixed send window bounds the pipe (bytes in flight that are neither
    SACKed nor marked lost); the peer's advertised window bounds how far
    snd_nxt may run ahead of snd_una. A segment is marked lost once DUPTHRESH
    segments' worth of data above it is SACKed, after three duplicate ACKs,
    or (for a retransmission) once that much data sent after it is SACKed.
    """

    def __init__(self, first_seq: int, mss: int, window: int, buffer_size: int,
                 aimd: bool = False):
        self.mss = mss
        self.window = window
        self.buffer_size = buffer_size
        self.peer_window = 0

        self.snd_una = first_seq
        self.snd_nxt = first_seq
        self.buf = bytearray()
        self.buf_start = first_seq
        self.fin_requested = False
        self.fin_seq: Optional[int] = None

        self.segs: list[Sent] = []
        self.starts: list[int] = []
        self.head = 0
        self.sacked: list[list[int]] = []
        self.high_sacked = first_seq
        self.pipe = 0
        self.lost_q: deque[Sent] = deque()
        self.marks: deque[tuple[int, Sent]] = deque()
        self.scan = first_seq
        self.dup_acks = 0
        self.rto_hold = False

        self.aimd = aimd
        self.cwnd = 2 * mss
        self.ssthresh = 1 << 62
        self.recover = first_seq

        self.segments_sent = 0
        self.retransmissions = 0
        self.rto_retransmits = 0
        self.tail_probes = 0
        self.loss_marks = 0
        self.karn_skips = 0

    # -- application side ------------------------------------------------

    @property
    def buffered_end(self) -> int:
        return self.buf_start + len(self.buf)

    @property
    def space(self) -> int:
        return self.buffer_size - len(self.buf)

    @property
    def outstanding(self) -> bool:
        return self.snd_nxt > self.snd_una

    @property
    def unsent(self) -> int:
        return self.buffered_end - self.snd_nxt

    def write(self, data: bytes) -> None:
        self.buf += data

    def payload(self, seg: Sent) -> bytes:
        lo = seg.start - self.buf_start
        hi = min(seg.end, self.buffered_end) - self.buf_start
        return bytes(self.buf[lo:hi]) if hi > lo else b""

    @property
    def all_sent(self) -> bool:
        return self._all_sent()

    def _all_sent(self) -> bool:
        return self.snd_nxt >= self.buffered_end and (not self.fin_requested
                                                      or self.fin_seq is not None)

    # -- transmission ----------------------------------------------------

    def _effective_window(self) -> int:
        return min(self.window, self.cwnd) if self.aimd else self.window

    def poll(self, now: float) -> list[Sent]:
        """Everything the windows currently allow: retransmissions first."""
        out: list[Sent] = []
        if self.rto_hold:
            return out
        window = self._effective_window()
        mss = self.mss
        lost_q = self.lost_q
        while lost_q:
            seg = lost_q[0]
            if not seg.lost or seg.sacked or seg.end <= self.snd_una:
                lost_q.popleft()
                continue
            if self.pipe > 0 and self.pipe + (seg.end - seg.start) > window:
                return out
            lost_q.popleft()
            self._retransmit(seg, now)
            out.append(seg)

        limit = self.snd_una + self.peer_window
        end = self.buffered_end
        while self.snd_nxt < end:
            n = min(mss, end - self.snd_nxt)
            if self.pipe > 0 and self.pipe + n > window:
                return out
            if self.snd_nxt + n > limit:
                return out
            out.append(self._send_new(self.snd_nxt + n, now))
        if self.fin_requested and self.fin_seq is None:
            self.fin_seq = self.snd_nxt
            out.append(self._send_new(self.snd_nxt + 1, now, fin=True))
        return out

    def probe(self, now: float) -> Optional[Sent]:
        """Zero-window probe: one byte past the advertised window."""
        if self.snd_nxt < self.buffered_end:
            return self._send_new(self.snd_nxt + 1, now)
        return None

    def _send_new(self, end: int, now: float, fin: bool = False) -> Sent:
        seg = Sent(self.snd_nxt, end, now, fin)
        self.segs.append(seg)
        self.starts.append(seg.start)
        self.pipe += end - seg.start
        self.snd_nxt = end
        self.segments_sent += 1
        return seg

    def _retransmit(self, seg: Sent, now: float) -> None:
        seg.lost = False
        seg.retransmits += 1
        seg.sent_at = now
        seg.in_pipe = True
        seg.mark = self.snd_nxt
        self.pipe += seg.end - seg.start
        self.marks.append((seg.mark, seg))
        self.retransmissions += 1
        self.segments_sent += 1

    # -- acknowledgement processing -------------------------------------

    def on_ack(self, ack: int, peer_window: int, blocks: list[tuple[int, int]],
               pure: bool, now: float) -> tuple[bool, Optional[float]]:
        """Apply one ACK. Returns (snd_una advanced, RTT sample or None)."""
        if ack > self.snd_nxt or ack < self.snd_una:
            return False, None
        old_window = self.peer_window
        self.peer_window = peer_window
        advanced = False
        sample = None
        if ack > self.snd_una:
            advanced = True
            sample = self._cumulative(ack, now)
            self.dup_acks = 0
            self.rto_hold = False
        elif pure and self.outstanding and peer_window == old_window:
            self.dup_acks += 1
            if self.dup_acks == DUPTHRESH:
                self._dupack_loss()
        if blocks:
            self._apply_sack(blocks)
        if self.sacked or self.marks:
            self._detect_losses()
        return advanced, sample

    def _cumulative(self, ack: int, now: float) -> Optional[float]:
        segs = self.segs
        i = self.head
        n = len(segs)
        newest: Optional[Sent] = None
        newest_was_sacked = False
        ambiguous = False
        newly = 0
        while i < n and segs[i].end <= ack:
            s = segs[i]
            if s.in_pipe:
                self.pipe -= s.end - s.start
                s.in_pipe = False
            if s.retransmits:
                ambiguous = True
            newest = s
            newest_was_sacked = s.sacked
            s.lost = False
            s.sacked = True
            newly += s.end - s.start
            i += 1
        self.head = i
        if i > 1024 and 2 * i > n:
            del segs[:i]
            del self.starts[:i]
            self.head = 0

        # Karn: no sample when the ACK may answer a retransmission; none either
        # when the newest covered segment was already SACKed (another arrival
        # triggered this ACK).
        sample = None
        if newest is not None:
            if ambiguous:
                self.karn_skips += 1
            elif not newest_was_sacked:
                sample = now - newest.sent_at

        if self.aimd:
            self._aimd_grow(newly, ack)

        self.snd_una = ack
        drop = min(ack, self.buffered_end) - self.buf_start
        if drop > 0:
            del self.buf[:drop]
            self.buf_start += drop
        if self.sacked:
            trim_below(self.sacked, ack)
        if self.scan < ack:
            self.scan = ack
        if self.high_sacked < ack:
            self.high_sacked = ack
        marks = self.marks
        while marks and marks[0][1].end <= ack:
            marks.popleft()
        if ack >= self.snd_nxt:
            marks.clear()
        return sample

    def _apply_sack(self, blocks: list[tuple[int, int]]) -> None:
        una, nxt = self.snd_una, self.snd_nxt
        segs, starts = self.segs, self.starts
        for left, right in blocks:
            left = max(left, una)
            right = min(right, nxt)
            if left >= right:
                continue
            fresh = uncovered(self.sacked, left, right)
            if not fresh:
                continue
            idx = merge_interval(self.sacked, left, right)
            lo, hi = self.sacked[idx]
            if hi > self.high_sacked:
                self.high_sacked = hi
            for fl, fr in fresh:
                i = max(bisect_right(starts, fl, lo=self.head) - 1, self.head)
                while i < len(segs) and segs[i].start < fr:
                    s = segs[i]
                    if not s.sacked and s.start >= lo and s.end <= hi:
                        s.sacked = True
                        s.lost = False
                        if s.in_pipe:
                            self.pipe -= s.end - s.start
                            s.in_pipe = False
                    i += 1

    def _mark_lost(self, s: Sent) -> None:
        s.lost = True
        if s.in_pipe:
            self.pipe -= s.end - s.start
            s.in_pipe = False
        self.lost_q.append(s)
        self.loss_marks += 1
        if self.aimd:
            self._aimd_loss()

    def _dupack_loss(self) -> None:
        if self.head < len(self.segs):
            s = self.segs[self.head]
            if not s.sacked and not s.lost and s.retransmits == 0:
                self._mark_lost(s)

    def _detect_losses(self) -> None:
        need = DUPTHRESH * self.mss
        threshold = None
        if self.sacked:
            if self._all_sent():
                # Nothing new can arrive to produce further SACKs; with FIFO
                # links any hole below the highest SACK is lost.
                threshold = self.sacked[-1][1]
            else:
                acc = 0
                for lo, hi in reversed(self.sacked):
                    if acc + (hi - lo) >= need:
                        threshold = hi - (need - acc)
                        break
                    acc += hi - lo
        if threshold is not None and threshold > self.scan:
            segs = self.segs
            i = max(bisect_right(self.starts, self.scan, lo=self.head) - 1, self.head)
            n = len(segs)
            while i < n and segs[i].end <= threshold:
                s = segs[i]
                if s.end > self.scan:
                    if not s.sacked and not s.lost and s.retransmits == 0:
                        self._mark_lost(s)
                    self.scan = s.end
                i += 1

        marks = self.marks
        while marks and self.high_sacked >= marks[0][0] + need:
            mark, s = marks.popleft()
            if s.mark != mark or s.sacked or s.lost or s.end <= self.snd_una:
                continue
            self._mark_lost(s)

    def tail_probe(self, now: float) -> Optional[Sent]:
        """Resend the lowest unSACKed segment without declaring anything lost.

        Used when everything has been sent, so no later transmission can
        reveal a lost (re)transmission through SACK.
        """
        for s in self.segs[self.head:]:
            if not s.sacked:
                if not s.in_pipe:
                    s.in_pipe = True
                    self.pipe += s.end - s.start
                s.lost = False
                s.retransmits += 1
                s.sent_at = now
                s.mark = self.snd_nxt
                self.retransmissions += 1
                self.segments_sent += 1
                self.tail_probes += 1
                return s
        return None

    def on_rto(self, now: float) -> Optional[Sent]:
        """Timeout: everything unSACKed is presumed lost; resend only the first."""
        if not self.outstanding:
            return None
        self.lost_q.clear()
        self.marks.clear()
        for s in self.segs[self.head:]:
            if s.sacked:
                continue
            if s.in_pipe:
                self.pipe -= s.end - s.start
                s.in_pipe = False
            s.lost = True
            self.lost_q.append(s)
        self.dup_acks = 0
        if self.aimd:
            self.ssthresh = max(self.pipe // 2, 2 * self.mss)
            self.cwnd = self.mss
            self.recover = self.snd_nxt
        if not self.lost_q:
            return None
        first = self.lost_q.popleft()
        self._retransmit(first, now)
        self.rto_retransmits += 1
        self.rto_hold = True
        return first

    # -- optional Reno-style window ------------------------------------

    def _aimd_grow(self, newly: int, ack: int) -> None:
        if ack <= self.recover:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd += min(newly, self.mss)
        else:
            self.cwnd += max(1, self.mss * self.mss // self.cwnd)

    def _aimd_loss(self) -> None:
        if self.snd_una < self.recover:
            return
        flight = self.snd_nxt - self.snd_una
        self.ssthresh = max(flight // 2, 2 * self.mss)
        self.cwnd = self.ssthresh
        self.recover = self.snd_nxt


class Arrival(Enum):
    IN_ORDER = "in_order"
    FILLED = "filled"        # in order, and closed a gap
    OUT_OF_ORDER = "out_of_order"
    DUPLICATE = "duplicate"


class Reassembly:
    """Receive side: in-order delivery, out-of-order store, SACK generation."""

    def __init__(self, rcv_nxt: int, buffer_size: int):
        self.rcv_nxt = rcv_nxt
        self.buffer_size = buffer_size
        self.ooo_starts: list[int] = []
        self.ooo: dict[int, bytes] = {}
        self.blocks: list[list[int]] = []
        self.fin_seq: Optional[int] = None
        self.fin_received = False
        self.last_seq: Optional[int] = None

    @property
    def has_gap(self) -> bool:
        return bool(self.ooo_starts)

    def accept(self, seq: int, payload: bytes, fin: bool) -> tuple[bytes, bool, Arrival]:
        """Returns (bytes now deliverable in order, FIN consumed now, arrival kind)."""
        rcv_nxt = self.rcv_nxt
        limit = rcv_nxt + self.buffer_size
        end = seq + len(payload)
        if end > limit:
            payload = payload[:max(0, limit - seq)]
            end = seq + len(payload)
            fin = False
        if fin and not self.fin_received:
            self.fin_seq = end

        if end <= rcv_nxt and not (self.fin_seq == rcv_nxt and not self.fin_received):
            return b"", False, Arrival.DUPLICATE

        if seq > rcv_nxt:
            if payload and seq not in self.ooo:
                i = bisect_left(self.ooo_starts, seq)
                self.ooo_starts.insert(i, seq)
                self.ooo[seq] = payload
                merge_interval(self.blocks, seq, end)
                self.last_seq = seq
            return b"", False, Arrival.OUT_OF_ORDER

        pieces = []
        if end > rcv_nxt:
            pieces.append(payload[rcv_nxt - seq:] if seq < rcv_nxt else payload)
            rcv_nxt = end
        had_gap = bool(self.ooo_starts)
        starts = self.ooo_starts
        k = 0
        while k < len(starts) and starts[k] <= rcv_nxt:
            s = starts[k]
            data = self.ooo.pop(s)
            e = s + len(data)
            if e > rcv_nxt:
                pieces.append(data[rcv_nxt - s:])
                rcv_nxt = e
            k += 1
        if k:
            del starts[:k]
        self.rcv_nxt = rcv_nxt
        if self.blocks:
            trim_below(self.blocks, rcv_nxt)

        fin_now = False
        if self.fin_seq is not None and not self.fin_received and rcv_nxt == self.fin_seq:
            self.rcv_nxt += 1
            self.fin_received = True
            fin_now = True
        data = pieces[0] if len(pieces) == 1 else b"".join(pieces)
        return data, fin_now, (Arrival.FILLED if had_gap else Arrival.IN_ORDER)

    def sack_blocks(self) -> list[tuple[int, int]]:
        """Up to four blocks: the one holding the latest arrival, then the highest."""
        blocks = self.blocks
        if not blocks:
            return []
        chosen = []
        if self.last_seq is not None:
            i = bisect_right(blocks, self.last_seq, key=_right)
            if i < len(blocks) and blocks[i][0] <= self.last_seq:
                chosen.append(i)
        for i in range(len(blocks) - 1, -1, -1):
            if len(chosen) >= MAX_SACK_BLOCKS:
                break
            if i not in chosen:
                chosen.append(i)
        return [(blocks[i][0], blocks[i][1]) for i in sorted(chosen)]
