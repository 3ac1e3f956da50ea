"""Render run metrics as CSV, an aligned table, or two-column plot data."""

from __future__ import annotations

from typing import Iterable

from .runner import RunMetrics

CSV_COLUMNS = ("loss_rate", "goodput_bps", "utilization", "completion_s", "retransmissions",
               "losses_random", "losses_overflow")
FORMATS = ("csv", "table", "plotdata")


def _num(value) -> str:
    if isinstance(value, int):
        return str(value)
    return f"{value:.6g}"


def _row(m: RunMetrics) -> list[str]:
    return [_num(getattr(m, c)) for c in CSV_COLUMNS]


def emit_report(results: Iterable[RunMetrics], fmt: str = "csv") -> bytes:
    """One line per run; ``results`` must be non-empty."""
    rows = list(results)
    if not rows:
        raise ValueError("no results to report")
    if fmt == "csv":
        lines = [",".join(CSV_COLUMNS)] + [",".join(_row(m)) for m in rows]
    elif fmt == "plotdata":
        lines = [f"{_num(m.loss_rate)} {_num(m.utilization)}" for m in rows]
    elif fmt == "table":
        body = [_row(m) for m in rows]
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(CSV_COLUMNS)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(CSV_COLUMNS, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in body]
    else:
        raise ValueError(f"unknown format {fmt!r}; expected one of {', '.join(FORMATS)}")
    return ("\n".join(lines) + "\n").encode()


def parse_csv_report(data: bytes) -> list[dict[str, float]]:
    """Inverse of the csv format, for round-trip checks and downstream tools."""
    lines = data.decode().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, (float(v) for v in line.split(",")))) for line in lines[1:]]
