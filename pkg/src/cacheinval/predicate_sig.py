"""Predicate-based signatures linking cached queries to database updates.

A cached query's signature is its full predicate group plus the single
most-selective predicate whose interval gets registered in the interval
index. An update's signature is a set of attribute projections: the
before/after images of the touched row, plus joint tuples produced by
instantiating the join templates memorized for the touched table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

from .exceptions import InvalidInterval, NoPredicates
from .model import (
    Delete, DmlStatement, Insert, Point, Predicate, Query, Range, Row,
    Substring, Update, Value, eval_predicate, qualify, split_attr, value_key,
)

# Upper-bound pad for substring intervals: any probe sharing the needle
# prefix compares below needle + SENTINEL for needles of practical length.
SENTINEL = b"\xff" * 8


@dataclass(frozen=True)
class PredicateSignature:
    """Query-side signature: all predicates plus the indexed attribute."""

    query_id: str
    entry_id: object
    predicates: tuple[Predicate, ...]
    index_attribute: str

    def chosen_predicate(self) -> Predicate:
        best = [p for p in self.predicates if p.attribute == self.index_attribute]
        return min(best, key=_selectivity_key)


@dataclass(frozen=True)
class TupleImage:
    """One projected (joint) tuple of an update signature.

    ``tables`` names the tables the image covers: just the updated table
    for a bare before/after image, or a template's full table set for a
    joint tuple.
    """

    tables: frozenset
    attrs: tuple[tuple[str, Value], ...]
    joint: bool

    def attr_map(self) -> dict[str, Value]:
        return dict(self.attrs)


@dataclass(frozen=True)
class UpdateSignatureP:
    stmt_id: str
    tuples: tuple[TupleImage, ...]


@dataclass(frozen=True)
class JoinTemplate:
    """A query's join-only skeleton (selections and projections stripped)."""

    template_id: str
    tables: tuple[str, ...]
    join_conditions: tuple[tuple[str, str], ...]

    @staticmethod
    def of(q: Query) -> "JoinTemplate":
        tables = tuple(sorted(q.tables))
        joins = tuple(sorted(tuple(sorted(j)) for j in q.join_conditions))
        return JoinTemplate(repr((tables, joins)), tables, joins)


@dataclass(frozen=True)
class IntervalKey:
    """What the interval index stores for one cache entry.

    Carries the original predicate so exclusive text bounds (kept closed
    in the index) can be re-checked after a stab.
    """

    attribute: str
    lo: Value
    hi: Value
    entry_id: object
    predicate: Predicate


_KIND_RANK = {Point: 0, Range: 1, Substring: 2}


def _selectivity_key(p: Predicate) -> tuple:
    """Deterministic priority: point, then narrower ranges, then substring."""
    rank = _KIND_RANK[type(p)]
    if isinstance(p, Range) and isinstance(p.lo, int) and isinstance(p.hi, int):
        width = (0, p.hi - p.lo)
    else:
        width = (1, 0)
    return (rank, width, p.attribute)


def make_signature(q: Query, entry_id=None) -> PredicateSignature:
    """Signature of a cacheable query; raises NoPredicates on full scans."""
    if not q.selections:
        raise NoPredicates(f"query {q.id} has no selection predicates")
    chosen = min(q.selections, key=_selectivity_key)
    return PredicateSignature(q.id, entry_id, tuple(q.selections), chosen.attribute)


def predicate_to_interval(p: Predicate) -> tuple[Value, Value]:
    """Closed interval covering every value the predicate can accept.

    Exclusive integer bounds are widened to the nearest closed integer;
    exclusive text bounds stay closed and rely on the post-stab re-check.
    Substrings map to [needle, needle + SENTINEL], covering every suffix
    that starts with the needle.
    """
    if isinstance(p, Point):
        return (p.value, p.value)
    if isinstance(p, Range):
        lo, hi = p.lo, p.hi
        if not p.lo_inclusive and isinstance(lo, int):
            lo += 1
        if not p.hi_inclusive and isinstance(hi, int):
            hi -= 1
        if value_key(lo) > value_key(hi):
            raise InvalidInterval(f"predicate {p!r} admits no value")
        return (lo, hi)
    if isinstance(p, Substring):
        return (p.needle, p.needle + SENTINEL)
    raise TypeError(f"not a predicate: {p!r}")


def probe_keys(v: Value) -> list[Value]:
    """Stab keys for one updated value.

    Text values probe with every non-empty byte suffix so substring
    intervals are hit; the full value (the first suffix) covers point and
    range intervals. Null produces no probes: it can satisfy nothing.
    """
    if v is None:
        return []
    if isinstance(v, int):
        return [v]
    return [v[i:] for i in range(len(v))]


class SignatureDb(Protocol):
    """What update-signature generation needs from the database."""

    def referenced_attributes(self) -> set:
        ...

    def templates_for(self, table: str) -> list:
        ...

    def instantiate_template(self, template, table: str, row: Row) -> list:
        ...

    def get_row(self, table: str, pk: int) -> Row:
        ...


def make_update_signature(u: DmlStatement, db: SignatureDb) -> UpdateSignatureP:
    """Projected images of the tuples an applicable statement will touch.

    Must be called before the statement is applied: before-images read the
    current state, and after-image template instantiation binds the updated
    table to the new row while joining the other (unaffected) tables, which
    is exactly their post-update content.
    """
    referenced = db.referenced_attributes()
    templates = db.templates_for(u.table)
    images: list[TupleImage] = []
    seen = set()

    def emit(tables: frozenset, attr_map: Mapping[str, Value], joint: bool):
        proj = tuple(sorted(
            (a, v) for a, v in attr_map.items() if a in referenced))
        key = (tables, proj, joint)
        if key not in seen:
            seen.add(key)
            images.append(TupleImage(tables, proj, joint))

    def emit_row(row: Row):
        bare = {qualify(u.table, a): v for a, v in row.attrs}
        bare[qualify(u.table, "pk")] = row.pk
        emit(frozenset((u.table,)), bare, joint=False)
        for tpl in templates:
            for joint_map in db.instantiate_template(tpl, u.table, row):
                emit(frozenset(tpl.tables), joint_map, joint=True)

    if isinstance(u, Insert):
        emit_row(u.row)
    elif isinstance(u, Delete):
        emit_row(db.get_row(u.table, u.pk))
    elif isinstance(u, Update):
        before = db.get_row(u.table, u.pk)
        merged = before.attr_map()
        merged.update(dict(u.new_attrs))
        emit_row(before)
        emit_row(Row.make(before.pk, merged))
    else:
        raise TypeError(f"not a DML statement: {u!r}")
    return UpdateSignatureP(u.stmt_id, tuple(images))


def match_p(sig: PredicateSignature, upd: UpdateSignatureP) -> bool:
    """True iff some image of the update satisfies the whole predicate group.

    A bare single-table image is only eligible against signatures whose
    predicates all reference that table; join queries are matched through
    the joint tuples their template produces. For a joint image, predicates
    on tables outside the template are unconstrained, and an attribute
    missing from a covered table evaluates as null (false).
    """
    pred_tables = [split_attr(p.attribute)[0] for p in sig.predicates]
    for img in upd.tuples:
        tables = img.tables
        if not img.joint and any(t not in tables for t in pred_tables):
            continue
        attrs = img.attr_map()
        ok = True
        for p, t in zip(sig.predicates, pred_tables):
            if t not in tables:
                continue
            if not eval_predicate(p, attrs.get(p.attribute)):
                ok = False
                break
        if ok:
            return True
    return False
