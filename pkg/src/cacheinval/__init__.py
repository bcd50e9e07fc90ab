"""Transparent, precise invalidation of query-result caches.

Queries and updates carry machine-generated signatures; two index
structures (an interval index over predicates and a containment index
over bloom filters) map each database update to exactly the cache entries
it outdates.
"""

from .bftree import BFTree
from .bloom import BloomConfig, BloomFilter, bf_contains_filter, bf_insert, \
    fp_rate, optimal_k, segmented_build
from .bloom_sig import BloomSignature, UpdateSignatureB, make_bloom_signature, \
    make_update_signature_b, match_b
from .engine import CacheEngine, CacheEntry, CostParams, Metrics, Strategy, \
    cost_model
from .model import (
    Delete, Insert, Point, Predicate, Query, Range, Row, Substring, Table,
    Update, Value, eval_conjunction, eval_predicate,
)
from .predicate_sig import (
    IntervalKey, JoinTemplate, PredicateSignature, UpdateSignatureP,
    make_signature, make_update_signature, match_p, predicate_to_interval,
    probe_keys,
)
from .qtree import QTree
from .simdb import Database, QueryResponse, UpdateResponse, load_fixture

__all__ = [
    "BFTree", "BloomConfig", "BloomFilter", "BloomSignature", "CacheEngine",
    "CacheEntry", "CostParams", "Database", "Delete", "Insert", "IntervalKey",
    "JoinTemplate", "Metrics", "Point", "Predicate", "PredicateSignature",
    "QTree", "Query", "QueryResponse", "Range", "Row", "Strategy", "Substring",
    "Table", "Update", "UpdateResponse", "UpdateSignatureB", "UpdateSignatureP",
    "Value", "bf_contains_filter", "bf_insert", "cost_model",
    "eval_conjunction", "eval_predicate", "fp_rate", "load_fixture",
    "make_bloom_signature", "make_signature", "make_update_signature",
    "make_update_signature_b", "match_b", "match_p", "optimal_k",
    "predicate_to_interval", "probe_keys", "segmented_build",
]

__version__ = "0.1.0"
