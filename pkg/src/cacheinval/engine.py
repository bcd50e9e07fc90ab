"""The cache side: bounded entry store with pluggable invalidation.

Four strategies share one store:

* ``transparent-p`` registers each entry's most selective predicate as an
  interval in a per-attribute interval tree; updates stab the trees with
  the projected images and drop entries whose full predicate group
  re-checks true (the double-check step), re-registering false candidates.
* ``transparent-b`` registers each entry's segmented bloom filters in the
  containment index; updates probe it with one-key filters.
* ``coarse`` associates entries with table namespaces and drops whole
  namespaces on update.
* ``ttl`` expires entries at a deadline and ignores updates.

Time is a logical tick counter advanced by the harness; TTL durations in
seconds are converted at a configurable simulated op rate so runs stay
deterministic.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

from .bftree import BFTree
from .bloom import BloomConfig
from .exceptions import EmptyResult
from .model import Query, value_key
from .predicate_sig import IntervalKey, match_p, predicate_to_interval, probe_keys
from .qtree import QTree
from .simdb import Database, QueryResponse, UpdateResponse

TRANSPARENT_P = "transparent-p"
TRANSPARENT_B = "transparent-b"
COARSE = "coarse"
TTL = "ttl"
STRATEGIES = (TRANSPARENT_P, TRANSPARENT_B, COARSE, TTL)


@dataclass(frozen=True)
class Strategy:
    kind: str
    ttl_seconds: float = 0.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == TTL and self.ttl_seconds <= 0:
            raise ValueError("ttl strategy needs ttl_seconds > 0")

    @property
    def modes(self) -> frozenset:
        if self.kind == TRANSPARENT_P:
            return frozenset("P")
        if self.kind == TRANSPARENT_B:
            return frozenset("B")
        return frozenset()


@dataclass
class Metrics:
    """Counters for one run; latency samples are appended by the harness."""

    lookups: int = 0
    hits: int = 0
    misses: int = 0
    stale_hits: int = 0
    admissions: int = 0
    evictions: int = 0
    invalidations: int = 0
    false_invalidations: int = 0
    b_probes: int = 0
    b_probe_filter_sum: int = 0
    lookup_latencies: list = field(default_factory=list)
    update_latencies: list = field(default_factory=list)

    def counters(self) -> dict:
        return {
            "lookups": self.lookups, "hits": self.hits, "misses": self.misses,
            "stale_hits": self.stale_hits, "admissions": self.admissions,
            "evictions": self.evictions, "invalidations": self.invalidations,
            "false_invalidations": self.false_invalidations,
        }

    def check(self) -> None:
        assert self.hits + self.misses == self.lookups
        assert self.stale_hits <= self.hits


@dataclass
class CacheEntry:
    entry_id: int
    query_id: str
    result: bytes
    namespace: frozenset
    inserted_at: int
    ttl_deadline: Optional[int] = None
    signature_p: object = None
    signature_b: object = None
    registration: object = None
    interval: Optional[IntervalKey] = None   # registered interval (P)
    coarse: bool = False                     # namespace-registered fallback


@dataclass(frozen=True)
class CostParams:
    """Inputs of the per-update cost model."""

    capacity: int            # C, cache capacity in entries
    updates_per_unit: float  # u
    outdated_per_update: float  # n
    refill_cost: float       # c_q
    update_cost: float       # c_u
    refill_cost_transparent: float  # c_q'
    update_cost_transparent: float  # c_u'
    fp_coarse: float         # p
    fp_transparent: float    # p'
    ttl: float               # t

    def __post_init__(self):
        if not (0.0 <= self.fp_coarse <= 1.0 and 0.0 <= self.fp_transparent <= 1.0):
            raise ValueError("false positive rates must be in [0, 1]")


def cost_model(params: CostParams) -> dict:
    """Per-update cost of each strategy (update cost plus cache refills)."""
    c, n = params.capacity, params.outdated_per_update
    transparent = ((n + (c - n) * params.fp_transparent)
                   * params.refill_cost_transparent
                   + params.update_cost_transparent)
    coarse = (n + (c - n) * params.fp_coarse) * params.refill_cost + params.update_cost
    if params.ttl * params.updates_per_unit == 0:
        raise ZeroDivisionError("ttl cost needs t > 0 and u > 0")
    ttl = (c * params.refill_cost) / (params.ttl * params.updates_per_unit) \
        + params.update_cost
    return {"transparent": transparent, "coarse": coarse, "ttl": ttl}


class CacheEngine:
    """Bounded LRU result cache wired to the invalidation indexes."""

    def __init__(self, db: Database, strategy: Strategy, capacity: int = 1024,
                 bloom_config: Optional[BloomConfig] = None,
                 qtree_arity: int = 32, bftree_arity: int = 16,
                 sim_ops_per_second: float = 10_000.0):
        self.db = db
        self.strategy = strategy
        self.capacity = capacity
        self.bloom_config = bloom_config or BloomConfig()
        self.metrics = Metrics()
        self.sim_ops_per_second = sim_ops_per_second
        self._qtree_arity = qtree_arity
        self._lock = threading.RLock()
        self._entries: OrderedDict[int, CacheEntry] = OrderedDict()
        self._by_query: dict[str, int] = {}
        self._qtrees: dict[str, QTree] = {}
        self._bftree = BFTree(self.bloom_config, arity=bftree_arity)
        self._namespace: dict[str, set] = {}
        self._clock = 0
        self._next_id = 0
        self._ttl_ticks = max(1, round(strategy.ttl_seconds * sim_ops_per_second)) \
            if strategy.kind == TTL else 0

    # -- logical time --------------------------------------------------------

    @property
    def now(self) -> int:
        return self._clock

    def advance(self, ticks: int = 1) -> int:
        with self._lock:
            self._clock += ticks
            return self._clock

    # -- read path ------------------------------------------------------------

    def lookup(self, query_id: str) -> Optional[CacheEntry]:
        """Cached entry for a query fingerprint, or None on miss.

        Whether a served hit is stale is judged by the harness oracle.
        """
        with self._lock:
            self.metrics.lookups += 1
            eid = self._by_query.get(query_id)
            entry = self._entries.get(eid) if eid is not None else None
            if entry is not None and self.strategy.kind == TTL \
                    and self._clock >= entry.ttl_deadline:
                self._drop(entry, count_eviction=True)
                entry = None
            if entry is None:
                self.metrics.misses += 1
                return None
            self.metrics.hits += 1
            self._entries.move_to_end(entry.entry_id)
            return entry

    def record_stale_hit(self) -> None:
        with self._lock:
            self.metrics.stale_hits += 1

    def record_false_invalidations(self, n: int) -> None:
        with self._lock:
            self.metrics.false_invalidations += n

    # -- write path -------------------------------------------------------------

    def admit(self, query: Query, response: QueryResponse) -> CacheEntry:
        """Store a query result and register its invalidation signature."""
        if not response.rows:
            raise EmptyResult("empty results are never cached")
        with self._lock:
            query_id = query.fingerprint()
            old_eid = self._by_query.get(query_id)
            if old_eid is not None:
                old = self._entries.get(old_eid)
                if old is not None:
                    self._drop(old, count_eviction=True)
            while len(self._entries) >= self.capacity:
                victim = next(iter(self._entries.values()))
                self._drop(victim, count_eviction=True)
            self._next_id += 1
            entry = CacheEntry(
                entry_id=self._next_id,
                query_id=query_id,
                result=response.result_bytes,
                namespace=frozenset(query.tables),
                inserted_at=self._clock,
                signature_p=response.signature_p,
                signature_b=response.signature_b,
                registration=response.registration,
            )
            kind = self.strategy.kind
            if kind == TTL:
                entry.ttl_deadline = self._clock + self._ttl_ticks
                entry.coarse = False
            elif kind == COARSE:
                entry.coarse = True
            elif kind == TRANSPARENT_P:
                if entry.signature_p is None:
                    entry.coarse = True   # full scans fall back to namespaces
                else:
                    sig = entry.signature_p
                    pred = sig.chosen_predicate()
                    lo, hi = predicate_to_interval(pred)
                    entry.interval = IntervalKey(sig.index_attribute,
                                                 lo, hi, entry.entry_id, pred)
                    self._tree_for(sig.index_attribute).insert(
                        value_key(lo), value_key(hi), entry.entry_id)
            elif kind == TRANSPARENT_B:
                if not query.selections:
                    entry.coarse = True
                else:
                    for f in entry.signature_b.filters:
                        self._bftree.insert(f, entry.entry_id)
            if entry.coarse:
                for t in entry.namespace:
                    self._namespace.setdefault(t, set()).add(entry.entry_id)
            self._entries[entry.entry_id] = entry
            self._by_query[query_id] = entry.entry_id
            self.metrics.admissions += 1
            return entry

    def _tree_for(self, attribute: str) -> QTree:
        tree = self._qtrees.get(attribute)
        if tree is None:
            tree = QTree(arity=self._qtree_arity)
            self._qtrees[attribute] = tree
        return tree

    # -- invalidation --------------------------------------------------------

    def on_update(self, upd: UpdateResponse) -> set:
        """Entry ids dropped in response to one update."""
        kind = self.strategy.kind
        if kind == TTL:
            return set()
        if kind == COARSE:
            return self._drop_namespace(upd.table)
        if kind == TRANSPARENT_P:
            dropped = self._on_update_p(upd)
        else:
            dropped = self._on_update_b(upd)
        dropped |= self._drop_namespace(upd.table)
        return dropped

    def _drop_namespace(self, table: str) -> set:
        with self._lock:
            eids = list(self._namespace.get(table, ()))
            dropped = set()
            for eid in eids:
                entry = self._entries.get(eid)
                if entry is not None:
                    self._drop(entry, count_invalidation=True)
                    dropped.add(eid)
            return dropped

    def _on_update_p(self, upd: UpdateResponse) -> set:
        sig = upd.signature_p
        if sig is None or not sig.tuples:
            return set()
        candidates: set[int] = set()
        for image in sig.tuples:
            for attr, v in image.attrs:
                tree = self._qtrees.get(attr)
                if tree is None:
                    continue
                for probe in probe_keys(v):
                    candidates |= tree.invalidate(value_key(probe))
        if not candidates:
            return set()
        dropped = set()
        with self._lock:
            for eid in candidates:
                entry = self._entries.get(eid)
                if entry is None:
                    continue  # lost a race with eviction; residue already gone
                if match_p(entry.signature_p, sig):
                    self._drop(entry, count_invalidation=True,
                               interval_already_removed=True)
                    dropped.add(eid)
                else:
                    # double-check failed: re-register the stabbed interval
                    iv = entry.interval
                    self._tree_for(iv.attribute).insert(
                        value_key(iv.lo), value_key(iv.hi), eid)
        return dropped

    def _on_update_b(self, upd: UpdateResponse) -> set:
        sig = upd.signature_b
        if sig is None or not sig.filters:
            return set()
        hits: set[int] = set()
        with self._lock:
            live_filters = len(self._bftree)
            for probe in sig.filters:
                self.metrics.b_probes += 1
                self.metrics.b_probe_filter_sum += live_filters
                hits |= self._bftree.invalidate(probe)
        if not hits:
            return set()
        dropped = set()
        with self._lock:
            for eid in hits:
                entry = self._entries.get(eid)
                if entry is None:
                    continue
                self._drop(entry, count_invalidation=True)
                dropped.add(eid)
        return dropped

    # -- removal ---------------------------------------------------------------

    def _drop(self, entry: CacheEntry, count_eviction=False,
              count_invalidation=False, interval_already_removed=False) -> None:
        """Remove an entry and all of its index residue (engine lock held)."""
        self._entries.pop(entry.entry_id, None)
        if self._by_query.get(entry.query_id) == entry.entry_id:
            del self._by_query[entry.query_id]
        if entry.interval is not None and not interval_already_removed:
            iv = entry.interval
            tree = self._qtrees.get(iv.attribute)
            if tree is not None:
                tree.evict(value_key(iv.lo), value_key(iv.hi), entry.entry_id)
        if entry.signature_b is not None and self.strategy.kind == TRANSPARENT_B \
                and not entry.coarse:
            for f in entry.signature_b.filters:
                self._bftree.evict(f, entry.entry_id)
        if entry.coarse:
            for t in entry.namespace:
                bucket = self._namespace.get(t)
                if bucket is not None:
                    bucket.discard(entry.entry_id)
        self.db.release(entry.registration)
        if count_eviction:
            self.metrics.evictions += 1
        if count_invalidation:
            self.metrics.invalidations += 1

    # -- inspection ---------------------------------------------------------------

    def __len__(self):
        return len(self._entries)

    def entries(self) -> list:
        with self._lock:
            return list(self._entries.values())

    def audit(self) -> None:
        """Index/entry agreement: every live entry has exactly its residue.

        Call at quiescent points only.
        """
        with self._lock:
            tree_contents: dict[str, list] = {}
            for attr, tree in self._qtrees.items():
                tree_contents[attr] = tree.audit()
            registered = {}
            for attr, triples in tree_contents.items():
                for lo, hi, eid in triples:
                    registered.setdefault(eid, []).append((attr, lo, hi))
            bft_pairs = self._bftree.audit()
            bft_by_eid: dict[int, list] = {}
            for bits, eid in bft_pairs:
                bft_by_eid.setdefault(eid, []).append(bits)
            for eid, entry in self._entries.items():
                if entry.interval is not None:
                    iv = entry.interval
                    expect = (iv.attribute, value_key(iv.lo), value_key(iv.hi))
                    got = registered.pop(eid, [])
                    if got != [expect]:
                        raise AssertionError(
                            f"entry {eid}: registered intervals {got}, expected {expect}")
                if entry.signature_b is not None \
                        and self.strategy.kind == TRANSPARENT_B and not entry.coarse:
                    want = sorted(f.bits for f in entry.signature_b.filters)
                    got_b = sorted(bft_by_eid.pop(eid, []))
                    if want != got_b:
                        raise AssertionError(f"entry {eid}: bloom residue mismatch")
                if entry.coarse:
                    for t in entry.namespace:
                        if eid not in self._namespace.get(t, ()):
                            raise AssertionError(f"entry {eid} missing from namespace {t}")
            if registered:
                raise AssertionError(f"orphan intervals for entries {sorted(registered)}")
            if bft_by_eid:
                raise AssertionError(f"orphan filters for entries {sorted(bft_by_eid)}")
            for t, bucket in self._namespace.items():
                for eid in bucket:
                    if eid not in self._entries:
                        raise AssertionError(f"namespace {t} holds dead entry {eid}")
