"""Domain types shared by all modules: values, rows, tables, queries, DML.

Attribute values are `None` (null), `int`, or `bytes`, with the total order
null < any int < any bytes; ints numerically, byte strings bytewise.
Queries are conjunctive select-project-join over named tables; predicates
are point, range, or substring matches on a single qualified attribute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from sortedcontainers import SortedList

from .exceptions import UnknownAttribute

Value = Union[None, int, bytes]

# Rank prefixes give the cross-type total order: null < int < bytes.
_RANK_NULL = 0
_RANK_INT = 1
_RANK_TEXT = 2


def value_key(v: Value) -> tuple:
    """Sort key realizing the total order over values of mixed type."""
    if v is None:
        return (_RANK_NULL,)
    if isinstance(v, bool):
        raise TypeError("bool is not a valid attribute value")
    if isinstance(v, int):
        return (_RANK_INT, v)
    if isinstance(v, bytes):
        return (_RANK_TEXT, v)
    raise TypeError(f"unsupported value type: {type(v).__name__}")


def as_value(v) -> Value:
    """Coerce convenient inputs (str) into canonical value types."""
    if isinstance(v, str):
        return v.encode("utf-8")
    if v is None or (isinstance(v, (int, bytes)) and not isinstance(v, bool)):
        return v
    raise TypeError(f"unsupported value type: {type(v).__name__}")


def value_cmp(a: Value, b: Value) -> int:
    ka, kb = value_key(a), value_key(b)
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    return 0


def split_attr(qualified: str) -> tuple[str, str]:
    """'R5.a1' -> ('R5', 'a1'). Raises on unqualified names."""
    table, dot, attr = qualified.partition(".")
    if not dot or not table or not attr:
        raise UnknownAttribute(f"expected qualified table.attr name, got {qualified!r}")
    return table, attr


def qualify(table: str, attr: str) -> str:
    return f"{table}.{attr}"


# --------------------------------------------------------------------------
# Predicates

@dataclass(frozen=True)
class Point:
    """Exact-match selection: attribute == value."""

    attribute: str
    value: Value


@dataclass(frozen=True)
class Range:
    """Interval selection with explicit inclusivity on both bounds."""

    attribute: str
    lo: Value
    hi: Value
    lo_inclusive: bool = True
    hi_inclusive: bool = True

    def __post_init__(self):
        if value_key(self.lo) > value_key(self.hi):
            raise ValueError(f"range lower bound {self.lo!r} exceeds upper bound {self.hi!r}")


@dataclass(frozen=True)
class Substring:
    """Contiguous byte-substring selection (LIKE '%needle%')."""

    attribute: str
    needle: bytes

    def __post_init__(self):
        if not self.needle:
            raise ValueError("substring needle must be non-empty")


Predicate = Union[Point, Range, Substring]


def eval_predicate(p: Predicate, v: Value) -> bool:
    """Evaluate one predicate on one value. Null never matches."""
    if v is None:
        return False
    if isinstance(p, Point):
        return value_cmp(v, p.value) == 0
    if isinstance(p, Range):
        kv = value_key(v)
        klo, khi = value_key(p.lo), value_key(p.hi)
        if kv < klo or (kv == klo and not p.lo_inclusive):
            return False
        if kv > khi or (kv == khi and not p.hi_inclusive):
            return False
        return True
    if isinstance(p, Substring):
        return isinstance(v, bytes) and p.needle in v
    raise TypeError(f"not a predicate: {p!r}")


def eval_conjunction(preds: Iterable[Predicate], attrs: Mapping[str, Value]) -> bool:
    """True iff every predicate holds on the map's value for its attribute.

    Attributes missing from the map are treated as null (and thus fail).
    The empty conjunction is true.
    """
    for p in preds:
        if not eval_predicate(p, attrs.get(p.attribute)):
            return False
    return True


# --------------------------------------------------------------------------
# Rows and tables

PK_ATTR = "pk"


@dataclass(frozen=True)
class Row:
    """One stored tuple: primary key plus named attribute values.

    Treated as immutable; updates replace the whole row.
    """

    pk: int
    attrs: tuple[tuple[str, Value], ...]

    @staticmethod
    def make(pk: int, attrs: Mapping[str, Value]) -> "Row":
        return Row(pk, tuple(attrs.items()))

    def attr_map(self) -> dict[str, Value]:
        return dict(self.attrs)

    def get(self, attr: str) -> Value:
        if attr == PK_ATTR:
            return self.pk
        for name, value in self.attrs:
            if name == attr:
                return value
        return None


class SecondaryIndex:
    """Ordered multimap from attribute value to primary keys."""

    __slots__ = ("attribute", "_entries")

    def __init__(self, attribute: str):
        self.attribute = attribute
        self._entries = SortedList()  # (value_key, pk) tuples

    def __len__(self):
        return len(self._entries)

    def add(self, v: Value, pk: int) -> None:
        self._entries.add((value_key(v), pk))

    def discard(self, v: Value, pk: int) -> None:
        entry = (value_key(v), pk)
        i = self._entries.bisect_left(entry)
        if i < len(self._entries) and self._entries[i] == entry:
            self._entries.remove(entry)

    def pks_point(self, v: Value) -> list[int]:
        k = value_key(v)
        return [pk for key, pk in self._entries.irange((k,), (k, float("inf"))) if key == k]

    def pks_range(self, lo: Value, hi: Value, lo_inclusive=True, hi_inclusive=True) -> list[int]:
        klo, khi = value_key(lo), value_key(hi)
        out = []
        for key, pk in self._entries.irange((klo,), (khi, float("inf"))):
            if key == klo and not lo_inclusive:
                continue
            if key == khi and not hi_inclusive:
                continue
            out.append(pk)
        return out

    def left_neighbors(self, v: Value, exclude_pk: Optional[int] = None) -> set[int]:
        """Pks holding the greatest value <= v, all ties included."""
        k = value_key(v)
        i = self._entries.bisect_right((k, float("inf")))
        while i > 0:
            key, pk = self._entries[i - 1]
            if pk == exclude_pk:
                i -= 1
                continue
            return self._pks_at(key, exclude_pk)
        return set()

    def right_neighbors(self, v: Value, exclude_pk: Optional[int] = None) -> set[int]:
        """Pks holding the least value >= v, all ties included."""
        k = value_key(v)
        i = self._entries.bisect_left((k,))
        while i < len(self._entries):
            key, pk = self._entries[i]
            if pk == exclude_pk:
                i += 1
                continue
            return self._pks_at(key, exclude_pk)
        return set()

    def _pks_at(self, key: tuple, exclude_pk: Optional[int]) -> set[int]:
        return {
            pk
            for k, pk in self._entries.irange((key,), (key, float("inf")))
            if k == key and pk != exclude_pk
        }

    def items(self) -> Iterable[tuple[tuple, int]]:
        return iter(self._entries)


class Table:
    """Row store with a primary-key map and ordered secondary indexes.

    Mutation must go through the owning database's write lock.
    """

    def __init__(self, name: str, schema: Iterable[str]):
        self.name = name
        self.schema = list(schema)
        self.rows: dict[int, Row] = {}
        self.indexes: dict[str, SecondaryIndex] = {}

    def create_index(self, attr: str) -> SecondaryIndex:
        if attr != PK_ATTR and attr not in self.schema:
            raise UnknownAttribute(f"{self.name} has no attribute {attr!r}")
        idx = self.indexes.get(attr)
        if idx is None:
            idx = SecondaryIndex(attr)
            for row in self.rows.values():
                idx.add(row.get(attr), row.pk)
            self.indexes[attr] = idx
        return idx

    def add_row(self, row: Row) -> None:
        self.rows[row.pk] = row
        for attr, idx in self.indexes.items():
            idx.add(row.get(attr), row.pk)

    def remove_row(self, pk: int) -> Row:
        row = self.rows.pop(pk)
        for attr, idx in self.indexes.items():
            idx.discard(row.get(attr), pk)
        return row

    def replace_row(self, row: Row) -> Row:
        old = self.remove_row(row.pk)
        self.add_row(row)
        return old


# --------------------------------------------------------------------------
# Queries and DML statements

@dataclass(frozen=True)
class Query:
    """Conjunctive SPJ query: ANDed selections over equi-joined tables.

    Join conditions and selection attributes use qualified `table.attr`
    names; the reserved attribute `pk` denotes a table's primary key.
    An empty projection means "all attributes".
    """

    id: str
    tables: tuple[str, ...]
    join_conditions: tuple[tuple[str, str], ...] = ()
    selections: tuple[Predicate, ...] = ()
    projection: tuple[str, ...] = ()
    cacheable: bool = True

    def fingerprint(self) -> str:
        """Cache key: identical query structure and constants collide."""
        return repr((self.tables, self.join_conditions, self.selections, self.projection))


@dataclass(frozen=True)
class Insert:
    table: str
    row: Row
    stmt_id: str = ""


@dataclass(frozen=True)
class Delete:
    table: str
    pk: int
    stmt_id: str = ""


@dataclass(frozen=True)
class Update:
    table: str
    pk: int
    new_attrs: tuple[tuple[str, Value], ...]
    stmt_id: str = ""

    @staticmethod
    def make(table: str, pk: int, new_attrs: Mapping[str, Value], stmt_id: str = "") -> "Update":
        return Update(table, pk, tuple(new_attrs.items()), stmt_id)


DmlStatement = Union[Insert, Delete, Update]
