"""Drives workloads through engine + database and measures the outcome.

Validation mode adds a single-threaded shadow oracle: every served hit is
re-executed against the live database to label stale reads, and every
invalidated entry is re-executed to label false invalidations. The oracle
distorts throughput, so it is off by default.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from typing import Optional

from ..bloom import BloomConfig, BloomFilter, optimal_k
from ..engine import COARSE, TRANSPARENT_B, TRANSPARENT_P, TTL, CacheEngine, Strategy
from ..exceptions import EmptyResult
from ..bftree import BFTree
from ..qtree import QTree
from ..simdb import Database, load_fixture
from .report import RunReport
from .workload import (
    TpccState, WorkloadSpec, YcsbOps, KeyChooser, tpcc_fixture_text,
    ycsb_fixture_text,
)


def default_bloom_config(bits: int = 128, keys_per_filter: int = 10,
                         seed: int = 0x5CA1AB1E) -> BloomConfig:
    return BloomConfig(m_bits=bits, k_hashes=optimal_k(bits, keys_per_filter),
                       seed=seed, keys_per_filter=keys_per_filter)


@dataclass
class EngineConfig:
    capacity: int = 1024
    bloom_bits: int = 128
    keys_per_filter: int = 10
    qtree_arity: int = 32
    bftree_arity: int = 16
    sim_ops_per_second: float = 10_000.0

    def bloom_config(self) -> BloomConfig:
        return default_bloom_config(self.bloom_bits, self.keys_per_filter)


def run_workload(spec: WorkloadSpec, strategy: Strategy,
                 fixture: Optional[str] = None, rows: int = 100_000,
                 engine_config: Optional[EngineConfig] = None,
                 validate: bool = False,
                 db: Optional[Database] = None) -> RunReport:
    """Execute one workload under one strategy and report metrics."""
    cfg = engine_config or EngineConfig()
    if spec.is_tpcc():
        return _run_tpcc(spec, strategy, cfg, validate, db)
    if db is None:
        db = load_fixture(fixture if fixture is not None
                          else ycsb_fixture_text(rows, seed=spec.seed))
    n_keys = len(db.tables["usertable"].rows)
    engine = CacheEngine(db, strategy, capacity=cfg.capacity,
                         bloom_config=cfg.bloom_config(),
                         qtree_arity=cfg.qtree_arity,
                         bftree_arity=cfg.bftree_arity,
                         sim_ops_per_second=cfg.sim_ops_per_second)
    threads = 1 if validate else max(1, spec.client_threads)
    shared = _SharedRunState(engine, db, validate)
    start = time.perf_counter()
    if threads == 1:
        _ycsb_worker(spec, engine, db, shared, worker=0, ops=spec.op_count,
                     n_keys=n_keys)
    else:
        per = spec.op_count // threads
        workers = [threading.Thread(
            target=_ycsb_worker,
            args=(spec, engine, db, shared, w, per, n_keys))
            for w in range(threads)]
        for t in workers:
            t.start()
        for t in workers:
            t.join()
    wall = time.perf_counter() - start
    audit_ok = True
    if validate:
        audit_ok = _audit_everything(engine, db)
    return RunReport.from_run(spec, strategy, engine.metrics, wall,
                              ops=spec.op_count, audit_ok=audit_ok)


class _SharedRunState:
    """Per-run bookkeeping for the shadow oracle."""

    def __init__(self, engine, db, validate):
        self.engine = engine
        self.db = db
        self.validate = validate
        self.queries: dict[int, tuple] = {}   # entry_id -> (Query, bytes)
        self.lock = threading.Lock()

    def remember(self, entry_id, query, result_bytes):
        if self.validate:
            with self.lock:
                self.queries[entry_id] = (query, result_bytes)

    def check_dropped(self, dropped):
        """Count drops whose result did not actually change (false drops)."""
        if not self.validate or not dropped:
            return
        false = 0
        for eid in dropped:
            with self.lock:
                item = self.queries.pop(eid, None)
            if item is None:
                continue
            query, cached = item
            resp = self.db.execute_query(query)
            if resp.result_bytes == cached:
                false += 1
        if false:
            self.engine.record_false_invalidations(false)

    def check_hit(self, query, entry) -> None:
        if not self.validate:
            return
        resp = self.db.execute_query(query)
        if resp.result_bytes != entry.result:
            self.engine.record_stale_hit()

    def forget(self, dropped):
        if self.validate and dropped:
            with self.lock:
                for eid in dropped:
                    self.queries.pop(eid, None)


def _ycsb_worker(spec, engine, db, shared, worker, ops, n_keys):
    gen = YcsbOps(spec, n_keys, worker)
    metrics = engine.metrics
    modes = engine.strategy.modes
    bloom_cfg = engine.bloom_config
    for _ in range(ops):
        engine.advance()
        kind, payload = gen.next_op()
        if kind in ("read", "scan"):
            t0 = time.perf_counter()
            query = payload
            entry = engine.lookup(query.fingerprint())
            if entry is not None:
                shared.check_hit(query, entry)
            else:
                resp = db.execute_query(query, modes=modes,
                                        bloom_config=bloom_cfg)
                if resp.rows:
                    made = engine.admit(query, resp)
                    shared.remember(made.entry_id, query, resp.result_bytes)
            metrics.lookup_latencies.append(time.perf_counter() - t0)
        else:
            t0 = time.perf_counter()
            resp = db.execute_dml(payload, modes=modes, bloom_config=bloom_cfg)
            dropped = engine.on_update(resp)
            shared.check_dropped(dropped)
            metrics.update_latencies.append(time.perf_counter() - t0)


def _audit_everything(engine, db) -> bool:
    try:
        engine.audit()
        db.check_index_consistency()
        for tree in engine._qtrees.values():
            tree.audit()
        engine._bftree.audit()
        engine.metrics.check()
        return True
    except AssertionError:
        return False


# --------------------------------------------------------------------------
# Mini TPC-C

def _run_tpcc(spec: WorkloadSpec, strategy: Strategy, cfg: EngineConfig,
              validate: bool, db: Optional[Database]) -> RunReport:
    """Two-transaction skeleton driven single-threaded.

    A transaction counts as one op of the spec's op budget. In validation
    mode the oracle re-executes every live cached query after each
    new-order, so exact invalidation (zero false negatives) is checked as
    well as false invalidations.
    """
    if db is None:
        db = load_fixture(tpcc_fixture_text(seed=spec.seed))
    engine = CacheEngine(db, strategy, capacity=cfg.capacity,
                         bloom_config=cfg.bloom_config(),
                         qtree_arity=cfg.qtree_arity,
                         bftree_arity=cfg.bftree_arity,
                         sim_ops_per_second=cfg.sim_ops_per_second)
    state = TpccState()
    rng = random.Random(spec.seed)
    shared = _SharedRunState(engine, db, validate)
    metrics = engine.metrics
    modes = strategy.modes
    bloom_cfg = engine.bloom_config
    names = sorted(spec.mix)
    weights = [spec.mix[n] for n in names]
    start = time.perf_counter()
    for _ in range(spec.op_count):
        engine.advance()
        kind = rng.choices(names, weights=weights)[0]
        if kind == "stock-level":
            t0 = time.perf_counter()
            query = state.stock_level(rng)
            entry = engine.lookup(query.fingerprint())
            if entry is not None:
                shared.check_hit(query, entry)
            else:
                resp = db.execute_query(query, modes=modes,
                                        bloom_config=bloom_cfg)
                if resp.rows:
                    made = engine.admit(query, resp)
                    shared.remember(made.entry_id, query, resp.result_bytes)
            metrics.lookup_latencies.append(time.perf_counter() - t0)
        else:
            t0 = time.perf_counter()
            dmls = state.new_order_dmls(
                rng, lambda item: db.get_row("stock", item).get("s_quantity"))
            dropped_all = set()
            for u in dmls:
                resp = db.execute_dml(u, modes=modes, bloom_config=bloom_cfg)
                dropped_all |= engine.on_update(resp)
            shared.check_dropped(dropped_all)
            if validate:
                _tpcc_check_live(engine, db, shared)
            metrics.update_latencies.append(time.perf_counter() - t0)
    wall = time.perf_counter() - start
    audit_ok = True
    if validate:
        audit_ok = _audit_everything(engine, db)
    return RunReport.from_run(spec, strategy, engine.metrics, wall,
                              ops=spec.op_count, audit_ok=audit_ok)


def _tpcc_check_live(engine, db, shared) -> None:
    """Surviving entries must still match re-execution (no false negatives).

    A mismatch on a live entry is a missed invalidation; it is counted as
    a stale hit so exactness shows up in the stale-read metric.
    """
    for entry in engine.entries():
        with shared.lock:
            item = shared.queries.get(entry.entry_id)
        if item is None:
            continue
        query, cached = item
        resp = db.execute_query(query)
        if resp.result_bytes != cached:
            engine.record_stale_hit()


# --------------------------------------------------------------------------
# Index micro-benchmark

def run_index_bench(kind: str, insert_ratio: float = 0.5,
                    distribution: str = "uniform", theta: float = 0.99,
                    threads: int = 16, ops: int = 200_000,
                    preload: int = 1_000_000, seed: int = 1,
                    arity: Optional[int] = None,
                    bloom_bits: int = 128, keys_per_filter: int = 5) -> RunReport:
    """Concurrent insert/invalidate mix against a preloaded index.

    Insertion beyond the preload capacity triggers an eviction, mirroring
    cache replacement. Reports aggregate throughput and per-op P95s.
    """
    if kind not in ("qtree", "bftree"):
        raise ValueError("kind must be qtree or bftree")
    rng = random.Random(seed)
    keyspace = max(preload * 4, 1024)
    spec = WorkloadSpec(name=f"index:{kind}", mix={"insert": 1.0},
                        distribution=distribution, theta=theta,
                        client_threads=threads, op_count=ops, seed=seed)
    chooser = KeyChooser(spec, keyspace)
    cfg = default_bloom_config(bloom_bits, keys_per_filter)

    if kind == "qtree":
        tree = QTree(arity=arity or 32)
        triples = []
        for eid in range(preload):
            lo = rng.randrange(keyspace)
            triples.append((lo, lo + rng.randint(1, 10), eid))
        tree.bulk_load(triples)
        make_item = _qtree_item_maker(keyspace)
        do_insert = lambda t, item: t.insert(*item)
        do_evict = lambda t, item: t.evict(*item)
        do_invalidate = lambda t, key: t.invalidate(key)
    else:
        tree = BFTree(cfg, arity=arity or 16)
        pairs = []
        for eid in range(preload):
            f = BloomFilter(cfg)
            for _ in range(keys_per_filter):
                f.insert(rng.randrange(keyspace))
            pairs.append((f, eid))
        tree.bulk_load(pairs)
        make_item = _bftree_item_maker(cfg, keyspace, keys_per_filter)
        do_insert = lambda t, item: t.insert(*item)
        do_evict = lambda t, item: t.evict(*item)

        def do_invalidate(t, key):
            probe = BloomFilter(cfg)
            probe.insert(key)
            return t.invalidate(probe)

    capacity = preload
    insert_lat: list[float] = []
    inval_lat: list[float] = []
    lat_lock = threading.Lock()
    next_eid = [preload]
    eid_lock = threading.Lock()

    def worker(widx: int):
        wrng = random.Random((seed << 16) + widx)
        own: list = []
        my_ins, my_inv = [], []
        for _ in range(ops // threads):
            if wrng.random() < insert_ratio:
                with eid_lock:
                    eid = next_eid[0]
                    next_eid[0] += 1
                item = make_item(wrng, eid)
                t0 = time.perf_counter()
                do_insert(tree, item)
                my_ins.append(time.perf_counter() - t0)
                own.append(item)
                if len(tree) > capacity and own:
                    do_evict(tree, own.pop(0))
            else:
                key = chooser.draw(wrng)
                t0 = time.perf_counter()
                do_invalidate(tree, key)
                my_inv.append(time.perf_counter() - t0)
        with lat_lock:
            insert_lat.extend(my_ins)
            inval_lat.extend(my_inv)

    start = time.perf_counter()
    if threads == 1:
        worker(0)
    else:
        ts = [threading.Thread(target=worker, args=(w,)) for w in range(threads)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
    wall = time.perf_counter() - start
    total = (ops // threads) * threads
    return RunReport.index_run(kind, insert_ratio, distribution, theta,
                               threads, total, seed, wall,
                               insert_lat, inval_lat, len(tree))


def _qtree_item_maker(keyspace):
    def make(rng, eid):
        lo = rng.randrange(keyspace)
        return (lo, lo + rng.randint(1, 10), eid)
    return make


def _bftree_item_maker(cfg, keyspace, keys_per_filter):
    def make(rng, eid):
        f = BloomFilter(cfg)
        for _ in range(keys_per_filter):
            f.insert(rng.randrange(keyspace))
        return (f, eid)
    return make
