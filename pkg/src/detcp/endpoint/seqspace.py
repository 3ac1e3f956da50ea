"""Modulo-2**32 sequence arithmetic.

Connections keep unwrapped (unbounded) sequence numbers internally and only
reduce them mod 2**32 on the wire; :func:`unwrap` maps a wire value back to
the unbounded value closest to a reference point.
"""

SEQ_MOD = 1 << 32
SEQ_MASK = SEQ_MOD - 1
HALF = 1 << 31


def seq_add(a: int, n: int) -> int:
    return (a + n) & SEQ_MASK


def seq_diff(a: int, b: int) -> int:
    """Signed distance a - b in sequence space, in [-2**31, 2**31)."""
    d = (a - b) & SEQ_MASK
    return d - SEQ_MOD if d >= HALF else d


def seq_lt(a: int, b: int) -> bool:
    return seq_diff(a, b) < 0


def seq_le(a: int, b: int) -> bool:
    return seq_diff(a, b) <= 0


def seq_gt(a: int, b: int) -> bool:
    return seq_diff(a, b) > 0


def seq_ge(a: int, b: int) -> bool:
    return seq_diff(a, b) >= 0


def unwrap(wire: int, reference: int) -> int:
    """Unbounded sequence number congruent to ``wire`` nearest ``reference``."""
    return reference + seq_diff(wire, reference & SEQ_MASK)
