"""Run reports: one flat record per run, CSV/JSON writers, figures.

The CSV schema is the stable contract (column order below); figures are
rendered next to the delimited output as PNG summaries of the same data.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

COLUMNS = [
    "kind", "name", "strategy", "ttl_seconds", "distribution", "theta",
    "threads", "ops", "seed", "insert_ratio",
    "lookups", "hits", "misses", "hit_ratio",
    "stale_hits", "stale_rate",
    "admissions", "evictions", "invalidations",
    "false_invalidations", "false_invalidation_rate",
    "throughput_ops_per_s", "wall_seconds",
    "p95_lookup_ms", "p95_update_ms",
    "p95_insert_us", "p95_invalidate_us",
    "final_size", "audit_ok",
]


def p95(samples) -> float:
    if not samples:
        return 0.0
    xs = sorted(samples)
    i = min(len(xs) - 1, math.ceil(0.95 * len(xs)) - 1)
    return xs[max(0, i)]


@dataclass
class RunReport:
    """Flat, serializable outcome of one run."""

    kind: str                 # workload | index-bench
    name: str
    strategy: str = ""
    ttl_seconds: float = 0.0
    distribution: str = "uniform"
    theta: float = 0.0
    threads: int = 1
    ops: int = 0
    seed: int = 0
    insert_ratio: float = 0.0
    lookups: int = 0
    hits: int = 0
    misses: int = 0
    hit_ratio: float = 0.0
    stale_hits: int = 0
    stale_rate: float = 0.0
    admissions: int = 0
    evictions: int = 0
    invalidations: int = 0
    false_invalidations: int = 0
    false_invalidation_rate: float = 0.0
    throughput_ops_per_s: float = 0.0
    wall_seconds: float = 0.0
    p95_lookup_ms: float = 0.0
    p95_update_ms: float = 0.0
    p95_insert_us: float = 0.0
    p95_invalidate_us: float = 0.0
    final_size: int = 0
    audit_ok: bool = True

    @staticmethod
    def from_run(spec, strategy, metrics, wall_seconds, ops, audit_ok=True) -> "RunReport":
        metrics.check()
        hits, lookups = metrics.hits, metrics.lookups
        inv = metrics.invalidations
        return RunReport(
            kind="workload",
            name=spec.name,
            strategy=strategy.kind,
            ttl_seconds=strategy.ttl_seconds,
            distribution=spec.distribution,
            theta=spec.theta if spec.distribution == "zipfian" else 0.0,
            threads=spec.client_threads,
            ops=ops,
            seed=spec.seed,
            lookups=lookups,
            hits=hits,
            misses=metrics.misses,
            hit_ratio=hits / lookups if lookups else 0.0,
            stale_hits=metrics.stale_hits,
            stale_rate=metrics.stale_hits / hits if hits else 0.0,
            admissions=metrics.admissions,
            evictions=metrics.evictions,
            invalidations=inv,
            false_invalidations=metrics.false_invalidations,
            false_invalidation_rate=(metrics.false_invalidations / inv
                                     if inv else 0.0),
            throughput_ops_per_s=ops / wall_seconds if wall_seconds else 0.0,
            wall_seconds=wall_seconds,
            p95_lookup_ms=p95(metrics.lookup_latencies) * 1e3,
            p95_update_ms=p95(metrics.update_latencies) * 1e3,
            audit_ok=audit_ok,
        )

    @staticmethod
    def index_run(kind, insert_ratio, distribution, theta, threads, ops, seed,
                  wall_seconds, insert_latencies, invalidate_latencies,
                  final_size) -> "RunReport":
        return RunReport(
            kind="index-bench",
            name=f"index:{kind}",
            strategy=kind,
            distribution=distribution,
            theta=theta if distribution == "zipfian" else 0.0,
            threads=threads,
            ops=ops,
            seed=seed,
            insert_ratio=insert_ratio,
            throughput_ops_per_s=ops / wall_seconds if wall_seconds else 0.0,
            wall_seconds=wall_seconds,
            p95_insert_us=p95(insert_latencies) * 1e6,
            p95_invalidate_us=p95(invalidate_latencies) * 1e6,
            final_size=final_size,
        )

    def to_row(self) -> dict:
        return {c: getattr(self, c) for c in COLUMNS}

    @staticmethod
    def from_row(row: dict) -> "RunReport":
        return RunReport(**row)


def write_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.to_row())


def write_json(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_row() for r in reports], fh, indent=2)
        fh.write("\n")


def read_json(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [RunReport.from_row(row) for row in json.load(fh)]


def write_reports(reports, out_path, fmt: str = "csv") -> list:
    """Write reports in the requested format(s); returns written paths."""
    base, ext = os.path.splitext(out_path)
    written = []
    if fmt in ("csv", "both"):
        p = out_path if ext == ".csv" else base + ".csv"
        write_csv(reports, p)
        written.append(p)
    if fmt in ("json", "both"):
        p = out_path if ext == ".json" and fmt == "json" else base + ".json"
        write_json(reports, p)
        written.append(p)
    return written


def render_figures(reports, out_dir) -> list:
    """Bar-chart summaries next to the delimited output; returns paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    workload = [r for r in reports if r.kind == "workload"]
    index = [r for r in reports if r.kind == "index-bench"]

    if workload:
        metrics = [("hit_ratio", "Cache hit ratio"),
                   ("stale_rate", "Stale read rate"),
                   ("false_invalidation_rate", "False invalidation rate"),
                   ("throughput_ops_per_s", "Throughput (ops/s)")]
        fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.6))
        labels = [f"{r.strategy}\n{r.name}" for r in workload]
        for ax, (attr, title) in zip(axes, metrics):
            ax.bar(range(len(workload)), [getattr(r, attr) for r in workload],
                   color="#4878a8")
            ax.set_xticks(range(len(workload)))
            ax.set_xticklabels(labels, fontsize=7, rotation=45, ha="right")
            ax.set_title(title, fontsize=9)
            ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        p = os.path.join(out_dir, "workload_summary.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)

    if index:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
        for kind in sorted({r.strategy for r in index}):
            rs = sorted((r for r in index if r.strategy == kind),
                        key=lambda r: r.insert_ratio)
            ax1.plot([r.insert_ratio for r in rs],
                     [r.throughput_ops_per_s for r in rs],
                     marker="o", label=kind)
            ax2.plot([r.insert_ratio for r in rs],
                     [r.p95_invalidate_us for r in rs],
                     marker="s", label=f"{kind} invalidate")
            ax2.plot([r.insert_ratio for r in rs],
                     [r.p95_insert_us for r in rs],
                     marker="^", label=f"{kind} insert")
        ax1.set_xlabel("insert ratio")
        ax1.set_ylabel("ops/s")
        ax1.set_title("Index throughput", fontsize=9)
        ax1.legend(fontsize=7)
        ax1.grid(alpha=0.3)
        ax2.set_xlabel("insert ratio")
        ax2.set_ylabel("P95 latency (us)")
        ax2.set_title("Index P95 latency", fontsize=9)
        ax2.legend(fontsize=7)
        ax2.grid(alpha=0.3)
        fig.tight_layout()
        p = os.path.join(out_dir, "index_summary.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths
