"""Command-line benchmark harness.

Subcommands:

* ``workload``: run a YCSB-like or mini TPC-C workload under one
  invalidation strategy and report cache metrics.
* ``index-bench``: stress the interval or bloom-containment index with a
  concurrent insert/invalidate mix.

Reports go to --out as CSV and/or JSON; matplotlib figures are rendered
alongside unless --no-plot. In --validate mode the shadow oracle labels
stale reads and false invalidations and the process exits nonzero if any
structural audit fails.
"""

from __future__ import annotations

import argparse
import sys

from ..engine import STRATEGIES, TTL, Strategy
from .report import render_figures, write_reports
from .runner import EngineConfig, run_index_bench, run_workload
from .workload import NAMED_MIXES, WorkloadSpec


def _parse_mix(text: str) -> dict:
    if text in NAMED_MIXES:
        return dict(NAMED_MIXES[text])
    mix = {}
    for part in text.split(","):
        name, _, val = part.partition("=")
        if not val:
            raise argparse.ArgumentTypeError(
                f"bad mix component {part!r}; use name=proportion")
        mix[name.strip()] = float(val)
    return mix


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cacheinval",
        description="Benchmark harness for transparent cache invalidation.")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("workload", help="run a cache workload")
    w.add_argument("--strategy", choices=STRATEGIES, default="transparent-p")
    w.add_argument("--ttl", type=float, default=1.0,
                   help="TTL in simulated seconds (ttl strategy only)")
    w.add_argument("--mix", type=_parse_mix, default="ycsb-mix",
                   help=f"named mix {sorted(NAMED_MIXES)} or name=prop,...")
    w.add_argument("--dist", choices=("uniform", "zipfian"), default="zipfian")
    w.add_argument("--theta", type=float, default=0.99)
    w.add_argument("--threads", type=int, default=1)
    w.add_argument("--ops", type=int, default=100_000)
    w.add_argument("--seed", type=int, default=1)
    w.add_argument("--fixture", default=None,
                   help="fixture file (default: built-in generated table)")
    w.add_argument("--rows", type=int, default=100_000,
                   help="rows for the built-in fixture")
    w.add_argument("--capacity", type=int, default=1024)
    w.add_argument("--max-scan-length", type=int, default=10)
    w.add_argument("--bloom-bits", type=int, default=128)
    w.add_argument("--keys-per-filter", type=int, default=10)
    w.add_argument("--sim-rate", type=float, default=10_000.0,
                   help="simulated ops per second for TTL accounting")
    w.add_argument("--validate", action="store_true",
                   help="single-threaded shadow oracle + audits")
    w.add_argument("--out", default=None, help="report path (.csv/.json)")
    w.add_argument("--format", choices=("csv", "json", "both"), default="csv")
    w.add_argument("--plot", dest="plot", action="store_true", default=True)
    w.add_argument("--no-plot", dest="plot", action="store_false")

    b = sub.add_parser("index-bench", help="stress one invalidation index")
    b.add_argument("--index", choices=("qtree", "bftree"), default="qtree")
    b.add_argument("--insert-ratio", default="0.25,0.5,0.75",
                   help="comma-separated insert ratios")
    b.add_argument("--dist", choices=("uniform", "zipfian"), default="uniform")
    b.add_argument("--theta", type=float, default=0.99)
    b.add_argument("--threads", type=int, default=16)
    b.add_argument("--ops", type=int, default=200_000)
    b.add_argument("--preload", type=int, default=1_000_000)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--arity", type=int, default=None)
    b.add_argument("--bloom-bits", type=int, default=128)
    b.add_argument("--keys-per-filter", type=int, default=5)
    b.add_argument("--out", default=None)
    b.add_argument("--format", choices=("csv", "json", "both"), default="csv")
    b.add_argument("--plot", dest="plot", action="store_true", default=True)
    b.add_argument("--no-plot", dest="plot", action="store_false")
    return p


def _cmd_workload(args) -> int:
    mix_name = next((k for k, v in NAMED_MIXES.items() if v == args.mix),
                    "custom")
    spec = WorkloadSpec(name=mix_name, mix=args.mix,
                        distribution=args.dist, theta=args.theta,
                        client_threads=args.threads, op_count=args.ops,
                        max_scan_length=args.max_scan_length, seed=args.seed)
    strategy = (Strategy(TTL, ttl_seconds=args.ttl)
                if args.strategy == TTL else Strategy(args.strategy))
    cfg = EngineConfig(capacity=args.capacity, bloom_bits=args.bloom_bits,
                       keys_per_filter=args.keys_per_filter,
                       sim_ops_per_second=args.sim_rate)
    report = run_workload(spec, strategy, fixture=args.fixture,
                          rows=args.rows, engine_config=cfg,
                          validate=args.validate)
    _emit([report], args)
    if args.validate and not report.audit_ok:
        print("AUDIT FAILED", file=sys.stderr)
        return 1
    return 0


def _cmd_index_bench(args) -> int:
    ratios = [float(x) for x in str(args.insert_ratio).split(",") if x]
    reports = []
    for r in ratios:
        reports.append(run_index_bench(
            args.index, insert_ratio=r, distribution=args.dist,
            theta=args.theta, threads=args.threads, ops=args.ops,
            preload=args.preload, seed=args.seed, arity=args.arity,
            bloom_bits=args.bloom_bits, keys_per_filter=args.keys_per_filter))
    _emit(reports, args)
    return 0


def _emit(reports, args) -> None:
    for r in reports:
        row = r.to_row()
        summary = ", ".join(
            f"{k}={row[k]:.4g}" if isinstance(row[k], float) else f"{k}={row[k]}"
            for k in ("name", "strategy", "ops", "hit_ratio", "stale_rate",
                      "false_invalidation_rate", "throughput_ops_per_s")
        )
        print(summary)
    if args.out:
        paths = write_reports(reports, args.out, args.format)
        for p in paths:
            print(f"wrote {p}")
        if args.plot:
            import os
            for p in render_figures(reports, os.path.dirname(args.out) or "."):
                print(f"wrote {p}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "workload":
        return _cmd_workload(args)
    return _cmd_index_bench(args)


if __name__ == "__main__":
    sys.exit(main())
