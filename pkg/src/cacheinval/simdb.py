"""In-memory mini-database that emits signatures alongside every response.

Executes conjunctive SPJ queries (index scan per table where possible,
index nested-loop joins) and single-statement DML under a single-writer /
multi-reader lock. When asked, it memorizes join templates, referenced
attributes, and utilized index sets for cacheable queries, and attaches
predicate and/or bloom signatures to query and update responses.
"""

from __future__ import annotations

import os
import random
import shlex
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

from .bloom import BloomConfig
from .bloom_sig import BloomSignature, UpdateSignatureB, make_bloom_signature, \
    make_update_signature_b
from .exceptions import (
    DuplicatePk, FixtureError, MissingTuple, NoPredicates, NoSuchIndex,
    UnknownAttribute, UnknownTable,
)
from .model import (
    Delete, DmlStatement, Insert, Point, Predicate, Query, Range, Row,
    Substring, Table, Update, Value, eval_predicate, qualify, split_attr,
    value_key,
)
from .predicate_sig import (
    JoinTemplate, PredicateSignature, UpdateSignatureP, _selectivity_key,
    make_signature, make_update_signature,
)

MODE_P = "P"
MODE_B = "B"


class RWLock:
    """Single-writer / multi-reader lock with writer preference."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    @contextmanager
    def read_locked(self):
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write_locked(self):
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


@dataclass(frozen=True)
class Registration:
    """Refcounted artifacts a cached entry holds in the database."""

    attributes: tuple[str, ...] = ()
    template_id: Optional[str] = None
    index_set: frozenset = frozenset()


@dataclass
class QueryResponse:
    rows: list
    result_bytes: bytes
    version: int
    signature_p: Optional[PredicateSignature] = None
    signature_b: Optional[BloomSignature] = None
    registration: Optional[Registration] = None


@dataclass
class UpdateResponse:
    status: str
    version: int
    table: str
    stmt_id: str
    signature_p: Optional[UpdateSignatureP] = None
    signature_b: Optional[UpdateSignatureB] = None


def canonical_result(rows) -> bytes:
    """Deterministic serialization of a row set for caching/comparison."""
    canon = sorted(
        tuple(sorted((k, value_key(v)) for k, v in row.items()))
        for row in rows
    )
    return repr(canon).encode("utf-8")


class Database:
    """Tables plus the memory a transparent cache needs it to keep."""

    def __init__(self):
        self.tables: dict[str, Table] = {}
        self.version = 0
        self._rw = RWLock()
        self._reg_lock = threading.Lock()
        self._templates: dict[str, list] = {}      # id -> [template, refcount]
        self._referenced: dict[str, int] = {}      # qualified attr -> refcount
        self._index_registry: dict[tuple, int] = {}  # (table, attr) -> refcount

    # -- schema ------------------------------------------------------------

    def create_table(self, name: str, schema) -> Table:
        if name in self.tables:
            raise FixtureError(f"table {name} already exists")
        t = Table(name, schema)
        self.tables[name] = t
        return t

    def create_index(self, table: str, attr: str) -> None:
        self._table(table).create_index(attr)

    def _table(self, name: str) -> Table:
        t = self.tables.get(name)
        if t is None:
            raise UnknownTable(name)
        return t

    # -- protocol used by signature generation ------------------------------

    def referenced_attributes(self) -> set:
        with self._reg_lock:
            return set(self._referenced)

    def templates_for(self, table: str) -> list:
        with self._reg_lock:
            return [tpl for tpl, _ in self._templates.values()
                    if table in tpl.tables]

    def registered_index_attrs(self, table: str) -> set:
        with self._reg_lock:
            return {a for (t, a) in self._index_registry if t == table}

    def get_row(self, table: str, pk: int) -> Row:
        row = self._table(table).rows.get(pk)
        if row is None:
            raise MissingTuple(f"{table}[{pk}]")
        return row

    def secondary_index(self, table: str, attribute: str):
        t = self._table(table)
        idx = t.indexes.get(attribute)
        if idx is None:
            raise NoSuchIndex(f"{table}.{attribute}")
        return idx

    def neighbors(self, table: str, attribute: str, value: Value,
                  exclude_pk=None) -> set:
        """Pks of the nearest tuples on both sides of value, ties included."""
        idx = self.secondary_index(table, attribute)
        return (idx.left_neighbors(value, exclude_pk)
                | idx.right_neighbors(value, exclude_pk))

    def instantiate_template(self, template: JoinTemplate, table: str,
                             row: Row) -> list:
        """Joint tuples of the template with ``table`` bound to ``row``."""
        bound = {qualify(table, a): v for a, v in row.attrs}
        bound[qualify(table, "pk")] = row.pk
        partials = [bound]
        remaining = [t for t in template.tables if t != table]
        joins = list(template.join_conditions)
        joined = {table}
        while remaining and partials:
            pick = self._pick_join(joins, joined, remaining)
            if pick is None:
                nxt = remaining.pop(0)
                partials = self._cross_all(partials, nxt)
                joined.add(nxt)
                continue
            (src_attr, dst_table, dst_attr) = pick
            remaining.remove(dst_table)
            joined.add(dst_table)
            partials = self._probe_join(partials, src_attr, dst_table,
                                        dst_attr, restrict=None)
        return partials

    def _pick_join(self, joins, joined, remaining):
        for a, b in joins:
            ta, tb = split_attr(a)[0], split_attr(b)[0]
            if ta in joined and tb in remaining:
                return (a, tb, split_attr(b)[1])
            if tb in joined and ta in remaining:
                return (b, ta, split_attr(a)[1])
        return None

    def _cross_all(self, partials, table):
        t = self._table(table)
        out = []
        for p in partials:
            for row in t.rows.values():
                out.append(self._merge(p, table, row))
        return out

    def _probe_join(self, partials, src_attr, dst_table, dst_attr, restrict):
        """Index nested-loop: extend each partial with matching dst rows."""
        t = self._table(dst_table)
        idx = None if dst_attr == "pk" else t.indexes.get(dst_attr)
        out = []
        for p in partials:
            v = p.get(src_attr)
            if v is None:
                continue
            if dst_attr == "pk":
                row = t.rows.get(v) if isinstance(v, int) else None
                pks = [row.pk] if row is not None else []
            elif idx is not None:
                pks = idx.pks_point(v)
            else:
                pks = [r.pk for r in t.rows.values() if r.get(dst_attr) == v]
            for pk in pks:
                if restrict is not None and pk not in restrict:
                    continue
                out.append(self._merge(p, dst_table, t.rows[pk]))
        return out

    @staticmethod
    def _merge(partial, table, row):
        m = dict(partial)
        for a, v in row.attrs:
            m[qualify(table, a)] = v
        m[qualify(table, "pk")] = row.pk
        return m

    # -- query execution -----------------------------------------------------

    def execute_query(self, q: Query, modes=frozenset(),
                      bloom_config: Optional[BloomConfig] = None) -> QueryResponse:
        with self._rw.read_locked():
            return self._execute_query_locked(q, frozenset(modes), bloom_config)

    def _execute_query_locked(self, q, modes, bloom_config):
        self._validate_query(q)
        local_preds = {t: [] for t in q.tables}
        for p in q.selections:
            local_preds[split_attr(p.attribute)[0]].append(p)
        scans = {t: self._local_scan(t, local_preds[t],
                                     capture=MODE_B in modes and q.cacheable)
                 for t in q.tables}
        rows = self._join_tables(q, scans)
        if q.projection:
            keep = set(q.projection)
            rows = [{k: v for k, v in r.items() if k in keep} for r in rows]
        resp = QueryResponse(rows=rows, result_bytes=canonical_result(rows),
                             version=self.version)
        if not (q.cacheable and rows):
            return resp
        reg_attrs: tuple = ()
        template_id = None
        index_set = frozenset()
        if MODE_P in modes:
            try:
                resp.signature_p = make_signature(q)
                reg_attrs = tuple(sorted({p.attribute for p in q.selections}))
            except NoPredicates:
                resp.signature_p = None
            template = JoinTemplate.of(q) if len(q.tables) > 1 else None
            if template is not None and resp.signature_p is not None:
                template_id = template.template_id
        if MODE_B in modes:
            cfg = bloom_config or BloomConfig()
            index_set = frozenset(
                used for t in q.tables if (used := scans[t][2]) is not None)
            resp.signature_b = make_bloom_signature(
                q, {t: scans[t][1] for t in q.tables}, cfg,
                index_set=index_set)
        if reg_attrs or template_id or index_set:
            resp.registration = Registration(reg_attrs, template_id, index_set)
            self._register(resp.registration,
                           JoinTemplate.of(q) if template_id else None)
        return resp

    def _validate_query(self, q: Query) -> None:
        for t in q.tables:
            self._table(t)
        for p in q.selections:
            t, a = split_attr(p.attribute)
            if t not in q.tables:
                raise UnknownTable(f"{t} not in query tables")
            if a != "pk" and a not in self._table(t).schema:
                raise UnknownAttribute(p.attribute)
        for a, b in q.join_conditions:
            for side in (a, b):
                t, attr = split_attr(side)
                if t not in q.tables:
                    raise UnknownTable(f"{t} not in query tables")
                if attr != "pk" and attr not in self._table(t).schema:
                    raise UnknownAttribute(side)

    def _local_scan(self, table: str, preds: list[Predicate], capture: bool):
        """(result_pks, accessed_pks, used_index) for one table's selections.

        Index scans record every visited pk; full scans record every pk
        satisfying the local predicates.
        """
        t = self._table(table)
        indexable = [p for p in preds if isinstance(p, (Point, Range))
                     and split_attr(p.attribute)[1] in t.indexes]
        bare = [(p, split_attr(p.attribute)[1]) for p in preds]
        if indexable:
            p0 = min(indexable, key=_selectivity_key)
            a0 = split_attr(p0.attribute)[1]
            idx = t.indexes[a0]
            if isinstance(p0, Point):
                visited = idx.pks_point(p0.value)
            else:
                visited = idx.pks_range(p0.lo, p0.hi, p0.lo_inclusive,
                                        p0.hi_inclusive)
            rest = [(p, a) for p, a in bare if p is not p0]
            result = [pk for pk in visited
                      if all(eval_predicate(p, t.rows[pk].get(a))
                             for p, a in rest)]
            return (result, list(visited) if capture else [], (table, a0))
        result = [row.pk for row in t.rows.values()
                  if all(eval_predicate(p, row.get(a)) for p, a in bare)]
        return (result, list(result) if capture else [], None)

    def _join_tables(self, q: Query, scans) -> list:
        order = sorted(q.tables, key=lambda t: len(scans[t][0]))
        start = order[0]
        t0 = self._table(start)
        partials = [self._merge({}, start, t0.rows[pk])
                    for pk in scans[start][0]]
        remaining = [t for t in order[1:]]
        joins = list(q.join_conditions)
        joined = {start}
        while remaining and partials:
            pick = self._pick_join(joins, joined, remaining)
            if pick is None:
                nxt = remaining.pop(0)
                tn = self._table(nxt)
                restrict = scans[nxt][0]
                partials = [self._merge(p, nxt, tn.rows[pk])
                            for p in partials for pk in restrict]
                joined.add(nxt)
                continue
            src_attr, dst_table, dst_attr = pick
            remaining.remove(dst_table)
            joined.add(dst_table)
            partials = self._probe_join(partials, src_attr, dst_table,
                                        dst_attr,
                                        restrict=set(scans[dst_table][0]))
        return partials if partials else []

    # -- DML execution -------------------------------------------------------

    def execute_dml(self, u: DmlStatement, modes=frozenset(),
                    bloom_config: Optional[BloomConfig] = None) -> UpdateResponse:
        with self._rw.write_locked():
            return self._execute_dml_locked(u, frozenset(modes), bloom_config)

    def _execute_dml_locked(self, u, modes, bloom_config):
        t = self._table(u.table)
        if isinstance(u, Insert):
            if u.row.pk in t.rows:
                raise DuplicatePk(f"{u.table}[{u.row.pk}]")
            self._validate_attrs(t, (a for a, _ in u.row.attrs))
        elif isinstance(u, (Update, Delete)):
            if u.pk not in t.rows:
                raise MissingTuple(f"{u.table}[{u.pk}]")
            if isinstance(u, Update):
                self._validate_attrs(t, (a for a, _ in u.new_attrs))
        else:
            raise TypeError(f"not a DML statement: {u!r}")

        sig_p = make_update_signature(u, self) if MODE_P in modes else None
        sig_b = (make_update_signature_b(u, self, bloom_config or BloomConfig())
                 if MODE_B in modes else None)

        if isinstance(u, Insert):
            t.add_row(u.row)
        elif isinstance(u, Delete):
            t.remove_row(u.pk)
        else:
            merged = t.rows[u.pk].attr_map()
            merged.update(dict(u.new_attrs))
            t.replace_row(Row.make(u.pk, merged))
        self.version += 1
        return UpdateResponse("ok", self.version, u.table, u.stmt_id,
                              signature_p=sig_p, signature_b=sig_b)

    @staticmethod
    def _validate_attrs(t: Table, attrs) -> None:
        for a in attrs:
            if a not in t.schema:
                raise UnknownAttribute(f"{t.name}.{a}")

    # -- registration bookkeeping --------------------------------------------

    def _register(self, reg: Registration, template) -> None:
        with self._reg_lock:
            for a in reg.attributes:
                self._referenced[a] = self._referenced.get(a, 0) + 1
            if reg.template_id is not None:
                slot = self._templates.setdefault(reg.template_id, [template, 0])
                slot[1] += 1
            for key in reg.index_set:
                self._index_registry[key] = self._index_registry.get(key, 0) + 1

    def release(self, reg: Optional[Registration]) -> None:
        """Drop one cached entry's refcounts (on eviction/invalidation)."""
        if reg is None:
            return
        with self._reg_lock:
            for a in reg.attributes:
                n = self._referenced.get(a, 0) - 1
                if n > 0:
                    self._referenced[a] = n
                else:
                    self._referenced.pop(a, None)
            if reg.template_id is not None:
                slot = self._templates.get(reg.template_id)
                if slot is not None:
                    slot[1] -= 1
                    if slot[1] <= 0:
                        del self._templates[reg.template_id]
            for key in reg.index_set:
                n = self._index_registry.get(key, 0) - 1
                if n > 0:
                    self._index_registry[key] = n
                else:
                    self._index_registry.pop(key, None)

    # -- consistency check -----------------------------------------------------

    def check_index_consistency(self) -> None:
        """Every index entry round-trips to a live row with matching value."""
        for t in self.tables.values():
            for attr, idx in t.indexes.items():
                count = 0
                for key, pk in idx.items():
                    count += 1
                    row = t.rows.get(pk)
                    if row is None:
                        raise AssertionError(f"{t.name}.{attr} indexes dead pk {pk}")
                    if value_key(row.get(attr)) != key:
                        raise AssertionError(
                            f"{t.name}.{attr} stale index value for pk {pk}")
                if count != len(t.rows):
                    raise AssertionError(
                        f"{t.name}.{attr} has {count} entries, {len(t.rows)} rows")


# --------------------------------------------------------------------------
# Fixture loading

def _parse_value(token: str) -> Value:
    if token == "null":
        return None
    try:
        return int(token)
    except ValueError:
        return token.encode("utf-8")


def _gen_value(spec: str, rng: random.Random, counters: dict, key: str) -> Value:
    kind, _, args = spec.partition(":")
    if kind == "seq":
        start = int(args) if args else 0
        n = counters.get(key, start)
        counters[key] = n + 1
        return n
    if kind == "uniform":
        lo, hi = args.split(":")
        return rng.randint(int(lo), int(hi))
    if kind == "const":
        return _parse_value(args)
    if kind == "text":
        n = int(args) if args else 8
        return bytes(rng.randrange(97, 123) for _ in range(n))
    if kind == "choice":
        return _parse_value(rng.choice(args.split("|")))
    raise FixtureError(f"unknown generator {spec!r}")


def load_fixture(spec: str) -> Database:
    """Build a database from the line-oriented fixture format.

    ``spec`` is either a path or the fixture text itself. Directives:

        seed <int>
        table <name> <attr>:<int|text> ...
        index <table> <attr|pk>
        row <table> <pk> <value> ...        # 'null' for nulls
        gen <table> count=<n> pk=seq[:start] <attr>=<generator> ...

    Generators: seq[:start], uniform:<lo>:<hi>, const:<v>, text:<len>,
    choice:a|b|c. Generation is deterministic for a fixed seed.
    """
    if "\n" not in spec and os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = spec
    db = Database()
    seed = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            parts = shlex.split(raw, comments=True)
        except ValueError as e:
            raise FixtureError(f"line {lineno}: {e}") from None
        if not parts:
            continue
        head, *rest = parts
        try:
            if head == "seed":
                seed = int(rest[0])
            elif head == "table":
                name, *attrs = rest
                schema = []
                for a in attrs:
                    aname, _, atype = a.partition(":")
                    if atype not in ("int", "text"):
                        raise FixtureError(f"bad attribute type {a!r}")
                    schema.append(aname)
                db.create_table(name, schema)
            elif head == "index":
                db.create_index(rest[0], rest[1])
            elif head == "row":
                name, pk, *values = rest
                t = db._table(name)
                if len(values) != len(t.schema):
                    raise FixtureError(
                        f"expected {len(t.schema)} values, got {len(values)}")
                row = Row(int(pk), tuple(
                    (a, _parse_value(v)) for a, v in zip(t.schema, values)))
                if row.pk in t.rows:
                    raise DuplicatePk(f"{name}[{row.pk}]")
                t.add_row(row)
            elif head == "gen":
                name = rest[0]
                t = db._table(name)
                opts = dict(kv.split("=", 1) for kv in rest[1:])
                count = int(opts.pop("count"))
                pk_spec = opts.pop("pk", "seq")
                rng = random.Random((seed << 20) ^ zlib.crc32(name.encode()))
                counters: dict = {}
                for _ in range(count):
                    pk = _gen_value(pk_spec, rng, counters, "pk")
                    attrs = tuple(
                        (a, _gen_value(g, rng, counters, a))
                        for a, g in opts.items())
                    t.add_row(Row(int(pk), attrs))
            else:
                raise FixtureError(f"unknown directive {head!r}")
        except FixtureError:
            raise
        except (DuplicatePk, UnknownTable, UnknownAttribute):
            raise
        except Exception as e:
            raise FixtureError(f"line {lineno}: {e}") from None
    return db
