"""Workload specs and operation generators (YCSB-like mixes, mini TPC-C)."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from ..model import Point, Query, Range, Row, Insert, Update

YCSB_TABLE = "usertable"
YCSB_FIELD = "field0"

NAMED_MIXES = {
    "ycsb-rh": {"read": 0.90, "update": 0.05, "scan": 0.05},
    "ycsb-sh": {"read": 0.50, "update": 0.05, "scan": 0.45},
    "ycsb-mix": {"read": 0.50, "update": 0.25, "scan": 0.25},
    "tpcc": {"new-order": 0.05, "stock-level": 0.95},
}


@dataclass(frozen=True)
class WorkloadSpec:
    """One workload's shape; all randomness derives from the seed."""

    name: str
    mix: dict
    distribution: str = "uniform"        # uniform | zipfian
    theta: float = 0.99
    client_threads: int = 1
    op_count: int = 10_000
    max_scan_length: int = 10
    seed: int = 1

    def __post_init__(self):
        total = sum(self.mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mix proportions sum to {total}, expected 1")
        if self.distribution == "zipfian" and self.theta <= 0:
            raise ValueError("zipfian needs theta > 0")
        if self.distribution not in ("uniform", "zipfian"):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @staticmethod
    def named(name: str, **overrides) -> "WorkloadSpec":
        mix = NAMED_MIXES.get(name)
        if mix is None:
            raise ValueError(f"unknown mix {name!r}; known: {sorted(NAMED_MIXES)}")
        return WorkloadSpec(name=name, mix=dict(mix), **overrides)

    def is_tpcc(self) -> bool:
        return "new-order" in self.mix


class ZipfianGenerator:
    """Exact zipfian sampler: rank r drawn with probability r^-theta / H."""

    def __init__(self, n: int, theta: float):
        ranks = np.arange(1, n + 1, dtype=np.float64)
        weights = ranks ** (-theta)
        self.cdf = np.cumsum(weights)
        self.cdf /= self.cdf[-1]
        self.n = n

    def draw(self, rng: random.Random) -> int:
        """Zero-based rank; rank 0 is the hottest."""
        return int(np.searchsorted(self.cdf, rng.random(), side="left"))

    def pmf(self, rank: int) -> float:
        prev = self.cdf[rank - 1] if rank > 0 else 0.0
        return float(self.cdf[rank] - prev)


class KeyChooser:
    def __init__(self, spec: WorkloadSpec, n_keys: int):
        self.n_keys = n_keys
        self.zipf = (ZipfianGenerator(n_keys, spec.theta)
                     if spec.distribution == "zipfian" else None)

    def draw(self, rng: random.Random) -> int:
        if self.zipf is not None:
            return self.zipf.draw(rng)
        return rng.randrange(self.n_keys)


def ycsb_fixture_text(rows: int, seed: int = 0, value_range: int = 1 << 30) -> str:
    return "\n".join([
        f"seed {seed}",
        f"table {YCSB_TABLE} {YCSB_FIELD}:int",
        f"index {YCSB_TABLE} pk",
        f"gen {YCSB_TABLE} count={rows} pk=seq {YCSB_FIELD}=uniform:0:{value_range}",
    ])


def point_read(key: int) -> Query:
    return Query(
        id=f"read:{key}",
        tables=(YCSB_TABLE,),
        selections=(Point(f"{YCSB_TABLE}.pk", key),),
    )


def range_scan(key: int, length: int) -> Query:
    return Query(
        id=f"scan:{key}:{length}",
        tables=(YCSB_TABLE,),
        selections=(Range(f"{YCSB_TABLE}.pk", key, key + length - 1),),
    )


class YcsbOps:
    """Deterministic per-worker YCSB-like op stream.

    Update values come from a worker-unique monotone counter, so an update
    always changes the stored row.
    """

    def __init__(self, spec: WorkloadSpec, n_keys: int, worker: int = 0):
        self.spec = spec
        self.rng = random.Random((spec.seed << 16) + worker)
        self.chooser = KeyChooser(spec, n_keys)
        self._ops = sorted(spec.mix.items())
        self._names = [n for n, _ in self._ops]
        self._weights = [w for _, w in self._ops]
        self._counter = worker
        self._stride = max(1, spec.client_threads)

    def next_op(self):
        kind = self.rng.choices(self._names, weights=self._weights)[0]
        key = self.chooser.draw(self.rng)
        if kind == "read":
            return ("read", point_read(key))
        if kind == "scan":
            length = self.rng.randint(1, self.spec.max_scan_length)
            return ("scan", range_scan(key, length))
        self._counter += self._stride
        value = (1 << 40) + self._counter  # outside the seeded value range
        return ("update",
                Update.make(YCSB_TABLE, key, {YCSB_FIELD: value},
                            stmt_id=f"u{self._counter}"))


# --------------------------------------------------------------------------
# Mini TPC-C skeleton: new-order writes stock and order lines; stock-level
# reads a three-way join over district, order_line, and stock.

TPCC_DISTRICTS = 8
TPCC_ITEMS = 200
TPCC_ORDER_RANGE = 5     # stock-level looks at the last N orders
TPCC_LINES_PER_ORDER = 4


def tpcc_fixture_text(districts: int = TPCC_DISTRICTS, items: int = TPCC_ITEMS,
                      seed: int = 0) -> str:
    return "\n".join([
        f"seed {seed}",
        "table district d_name:text",
        f"gen district count={districts} pk=seq:1 d_name=text:8",
        "table stock s_quantity:int",
        f"gen stock count={items} pk=seq:1 s_quantity=uniform:10:100",
        "table order_line ol_d_id:int ol_o_id:int ol_i_id:int ol_quantity:int",
        "index order_line ol_d_id",
        "index order_line ol_o_id",
        "index order_line ol_i_id",
        "index stock s_quantity",
    ])


def stock_level_query(district: int, order_counter: int, threshold: int) -> Query:
    lo = max(1, order_counter - TPCC_ORDER_RANGE + 1)
    return Query(
        id=f"sl:{district}:{order_counter}:{threshold}",
        tables=("district", "order_line", "stock"),
        join_conditions=(
            ("order_line.ol_d_id", "district.pk"),
            ("order_line.ol_i_id", "stock.pk"),
        ),
        selections=(
            Point("district.pk", district),
            Range("order_line.ol_o_id", lo, max(lo, order_counter)),
            Range("stock.s_quantity", 0, threshold, hi_inclusive=False),
        ),
    )


@dataclass
class TpccState:
    """Order counters and pk allocator; owned by a single-threaded driver."""

    districts: int = TPCC_DISTRICTS
    items: int = TPCC_ITEMS
    order_counters: dict = field(default_factory=dict)
    next_ol_pk: int = 1

    def new_order_dmls(self, rng: random.Random, stock_rows) -> list:
        """DML statements of one new-order transaction."""
        d = rng.randint(1, self.districts)
        o_id = self.order_counters.get(d, 0) + 1
        self.order_counters[d] = o_id
        dmls = []
        chosen = rng.sample(range(1, self.items + 1),
                            k=min(TPCC_LINES_PER_ORDER, self.items))
        for item in chosen:
            qty = rng.randint(1, 5)
            pk = self.next_ol_pk
            self.next_ol_pk += 1
            dmls.append(Insert("order_line", Row.make(pk, {
                "ol_d_id": d, "ol_o_id": o_id, "ol_i_id": item,
                "ol_quantity": qty,
            }), stmt_id=f"no{pk}"))
            current = stock_rows(item)
            new_q = current - qty
            if new_q < 10:
                new_q += 91
            dmls.append(Update.make("stock", item, {"s_quantity": new_q},
                                    stmt_id=f"st{pk}"))
        return dmls

    def stock_level(self, rng: random.Random) -> Query:
        d = rng.randint(1, self.districts)
        threshold = rng.randint(10, 25)
        return stock_level_query(d, self.order_counters.get(d, 0), threshold)
