"""Command line entry point: ``detcp run|sweep|pendulum|validate``.

Exit status is 0 on success, 1 for a scenario or topology error, 2 when any
flow did not finish within the scenario's duration cap.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import Optional, Sequence

from ..netsim import TopologyError, format_trace
from .report import FORMATS, emit_report
from .runner import loss_sweep, run_pendulum_comparison, run_scenario
from .scenario import ScenarioConfig, ScenarioError, parse_scenario, shipped_scenarios

EXIT_OK, EXIT_SCENARIO, EXIT_TIMEOUT = 0, 1, 2


def _load(args) -> ScenarioConfig:
    cfg = parse_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def _write(args, data: bytes) -> None:
    if getattr(args, "output", None):
        with open(args.output, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def cmd_run(args) -> int:
    cfg = _load(args)
    result = run_scenario(cfg, args.loss, trace=bool(args.trace),
                          until_closed=args.until_closed, wire_check=not args.no_wire_check)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(format_trace(result.trace))
    rows = [result.aggregate] if result.aggregate is not None else []
    if rows:
        _write(args, emit_report(rows, args.format))
    if result.timed_out:
        print(f"TIMEOUT: flows incomplete at {cfg.duration_cap:g} s", file=sys.stderr)
        return EXIT_TIMEOUT
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.rates:
        cfg = replace(cfg, loss_sweep=[float(r) for r in args.rates.split(",")])
    rows = loss_sweep(cfg, wire_check=not args.no_wire_check)
    _write(args, emit_report([run.aggregate for _, run in rows], args.format))
    if any(run.timed_out for _, run in rows):
        print("TIMEOUT: at least one run did not finish", file=sys.stderr)
        return EXIT_TIMEOUT
    return EXIT_OK


def cmd_pendulum(args) -> int:
    cfg = _load(args)
    res = run_pendulum_comparison(cfg)
    lines = ["variant,flow,goodput_bps,utilization,completion_s"]
    runs = [("coupled", res.coupled), ("decoupled", res.decoupled)]
    runs += [("isolated", run) for run in res.isolated.values()]
    for variant, run in runs:
        for m in run.flows:
            lines.append(f"{variant},{m.flow},{m.goodput_bps:.6g},{m.utilization:.6g},"
                         f"{m.completion_s:.6g}")
    for variant, run in runs[:2]:
        lines.append(f"{variant},*,{sum(m.goodput_bps for m in run.flows):.6g},,")
    _write(args, ("\n".join(lines) + "\n").encode())
    timed_out = any(run.timed_out for _, run in runs)
    return EXIT_TIMEOUT if timed_out else EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    variants = list(cfg.variants) or [None]
    for v in variants:
        c = cfg.for_variant(v) if v is not None else cfg
        topo = c.build()
        label = f" [{v}]" if v else ""
        print(f"{cfg.name}{label}: {len(topo.nodes)} nodes, {len(topo.links)} links, "
              f"{len(c.flows)} flows, sweep {c.loss_sweep or '-'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detcp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    names = ", ".join(shipped_scenarios())

    def common(p, seed=True):
        p.add_argument("scenario", help=f"scenario file, or a shipped scenario: {names}")
        if seed:
            p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("-o", "--output", help="write the report here instead of stdout")

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--loss", type=float, help="loss rate for the scenario's sweep links")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--trace", metavar="FILE", help="write the per-hop packet trace")
    p.add_argument("--until-closed", action="store_true",
                   help="keep running through connection teardown")
    p.add_argument("--no-wire-check", action="store_true",
                   help="skip encoding and decoding segments in flight")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the scenario's loss sweep")
    common(p)
    p.add_argument("--rates", help="comma separated rates overriding the [sweep] section")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--no-wire-check", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pendulum", help="coupled vs decoupled antiparallel flows")
    common(p)
    p.set_defaults(func=cmd_pendulum)

    p = sub.add_parser("validate", help="parse a scenario and build its topology")
    common(p, seed=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
