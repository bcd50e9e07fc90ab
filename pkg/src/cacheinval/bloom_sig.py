"""Bloom-filter signatures linking cached queries to database updates.

A cached query's signature packs the primary keys of every tuple it
accessed into segmented bloom filters. An update's signature is a set of
one-key filters: the touched primary key, augmented for inserted values
with the index-order neighbors that witness a new tuple entering a cached
range. Matching is filter containment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from .bloom import BloomConfig, BloomFilter, bf_contains_filter, segmented_build
from .exceptions import EmptyResult
from .model import Delete, DmlStatement, Insert, Query, Row, Update, Value


@dataclass(frozen=True)
class BloomSignature:
    """Query-side signature: segmented filters over all accessed pks."""

    query_id: str
    entry_id: object
    filters: tuple[BloomFilter, ...]
    index_set: frozenset  # (table, attribute) pairs the query scanned

    def registration_message(self) -> tuple:
        tables = frozenset(t for t, _ in self.index_set)
        return (self.entry_id, tables,
                tuple(f.to_bytes() for f in self.filters), self.index_set)


@dataclass(frozen=True)
class UpdateSignatureB:
    """Update-side signature: one-key filters, deduplicated by pk."""

    stmt_id: str
    filters: tuple[BloomFilter, ...]


def make_bloom_signature(q: Query, accessed_pks: Mapping[str, Sequence[int]],
                         cfg: BloomConfig, entry_id=None,
                         index_set: frozenset = frozenset()) -> BloomSignature:
    """Pack per-table accessed pk streams into segmented filters.

    ``accessed_pks`` must hold, for each table of the query, every tuple
    the execution touched on that table's scan path.
    """
    stream = []
    for t in q.tables:
        stream.extend(accessed_pks.get(t, ()))
    if not stream:
        raise EmptyResult(f"query {q.id} accessed no tuples; do not cache")
    filters = segmented_build(stream, cfg)
    return BloomSignature(q.id, entry_id, tuple(filters), index_set)


class NeighborDb(Protocol):
    """What update-signature generation needs from the database."""

    def neighbors(self, table: str, attribute: str, value: Value,
                  exclude_pk=None) -> set:
        ...

    def registered_index_attrs(self, table: str) -> set:
        ...

    def get_row(self, table: str, pk: int) -> Row:
        ...


def _one_key_filters(pks, cfg: BloomConfig) -> tuple[BloomFilter, ...]:
    out = []
    for pk in sorted(pks):
        f = BloomFilter(cfg)
        f.insert(pk)
        out.append(f)
    return tuple(out)


def make_update_signature_b(u: DmlStatement, db: NeighborDb,
                            cfg: BloomConfig) -> UpdateSignatureB:
    """One-key filters for the statement's touched and neighbor pks.

    Deleted and updated tuples contribute their own pk. Inserted values
    contribute the left/right neighbors with respect to every memorized
    index on the table; for updates only attributes whose value actually
    changed get neighbor augmentation (an unchanged attribute cannot move
    the row into a cached range, and its containment is already witnessed
    by the row's own pk).

    Must be called before the statement is applied.
    """
    pks: set[int] = set()
    if isinstance(u, Delete):
        pks.add(u.pk)
    elif isinstance(u, Insert):
        for attr in db.registered_index_attrs(u.table):
            pks |= db.neighbors(u.table, attr, u.row.get(attr),
                                exclude_pk=u.row.pk)
    elif isinstance(u, Update):
        pks.add(u.pk)
        before = db.get_row(u.table, u.pk)
        new_attrs = dict(u.new_attrs)
        for attr in db.registered_index_attrs(u.table):
            if attr in new_attrs and new_attrs[attr] != before.get(attr):
                pks |= db.neighbors(u.table, attr, new_attrs[attr],
                                    exclude_pk=u.pk)
    else:
        raise TypeError(f"not a DML statement: {u!r}")
    return UpdateSignatureB(u.stmt_id, _one_key_filters(pks, cfg))


def match_b(sig: BloomSignature, upd: UpdateSignatureB) -> bool:
    """True iff some update filter is contained in some signature filter."""
    return any(
        bf_contains_filter(s, p)
        for p in upd.filters
        for s in sig.filters
    )
