"""In-memory bag-semantics relational executor.

Relations are multisets stored as tuple -> count maps, so duplicate-heavy
blow-up scenarios stay cheap to measure while cardinalities remain exact.
Null semantics follow SQL: a null join or semi-join key never matches, all
comparisons against null fail, and aggregates skip nulls.

`eval_naive` is the brute-force oracle: selections, pairwise joins in
declaration order without any reordering, projection, grouping.  `eval_plan`
interprets the staged plan IR; both funnel through the same FINALIZE
semantics so their outputs are directly comparable with `bag_equal`.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import Mapping, Optional

from .classification import normalize_aggregation
from .errors import YansqlError
from .plan_builder import (BaseScan, Finalize, Mode, NaturalJoin, SemiJoin,
                           StageKind, StagePlan, ViewJoin)
from .sql_frontend import ConjunctiveQuery


class EngineError(YansqlError):
    pass


class IoError(EngineError):
    pass


class ArityMismatch(EngineError):
    pass


class SchemaMismatch(EngineError):
    pass


class UnknownAttribute(EngineError):
    pass


class MissingRelation(EngineError):
    pass


class PlanReferenceError(EngineError):
    pass


class AggregateTypeError(EngineError):
    pass


# ---------------------------------------------------------------------------
# Relations
# ---------------------------------------------------------------------------

@dataclass
class Relation:
    schema: tuple
    rows: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        if not isinstance(self.rows, Counter):
            self.rows = Counter(dict(self.rows)) if isinstance(self.rows, dict) \
                else Counter(tuple(r) for r in self.rows)
        for row in self.rows:
            if len(row) != len(self.schema):
                raise ArityMismatch(
                    f"row {row!r} does not match schema {self.schema!r}")

    @classmethod
    def from_rows(cls, schema, rows) -> "Relation":
        return cls(tuple(schema), Counter(tuple(r) for r in rows))

    def cardinality(self) -> int:
        return sum(self.rows.values())

    def column(self, attr: str) -> int:
        try:
            return self.schema.index(attr)
        except ValueError:
            raise UnknownAttribute(
                f"attribute {attr!r} not in schema {self.schema!r}") from None

    def expanded(self) -> list:
        """All rows with duplicates, sorted for stable output."""
        out = []
        for row, count in self.rows.items():
            out.extend([row] * count)
        return sorted(out, key=_row_sort_key)

    def __eq__(self, other):
        return (isinstance(other, Relation)
                and self.schema == other.schema and self.rows == other.rows)


def _value_sort_key(value):
    if value is None:
        return (0, "")
    if isinstance(value, int):
        return (1, value)
    return (2, value)


def _row_sort_key(row):
    return tuple(_value_sort_key(v) for v in row)


def bag_equal(a: Relation, b: Relation) -> bool:
    """Schemas match up to column order; tuple multisets identical."""
    if sorted(a.schema) != sorted(b.schema):
        return False
    if a.schema == b.schema:
        return a.rows == b.rows
    # map each column of a to the matching occurrence in b
    positions: dict = {}
    perm = []
    for name in a.schema:
        occurrence = positions.get(name, 0)
        positions[name] = occurrence + 1
        indices = [j for j, col in enumerate(b.schema) if col == name]
        perm.append(indices[occurrence])
    remapped = Counter()
    for row, count in b.rows.items():
        remapped[tuple(row[j] for j in perm)] += count
    return a.rows == remapped


def project(rel: Relation, columns) -> Relation:
    """Bag projection: multiplicities of equal projections add up."""
    columns = tuple(columns)
    idx = [rel.column(c) for c in columns]
    rows = Counter()
    for row, count in rel.rows.items():
        rows[tuple(row[i] for i in idx)] += count
    return Relation(columns, rows)


def distinct(rel: Relation) -> Relation:
    return Relation(rel.schema, Counter(dict.fromkeys(rel.rows, 1)))


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------

def _parse_value(text: str):
    if text == "":
        return None
    if text.isdigit() or (text.startswith("-") and text[1:].isdigit()):
        return int(text)
    return text


def load_csv(path, declared_schema=None) -> Relation:
    """First row is the header; all-digit fields parse as integers, empty
    fields as null; duplicate rows increase multiplicity."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IoError(f"{path}: missing header row") from None
            schema = tuple(col.strip().lower() for col in header)
            if declared_schema is not None \
                    and tuple(declared_schema) != schema:
                raise SchemaMismatch(
                    f"{path}: header {schema!r} does not match declared "
                    f"{tuple(declared_schema)!r}")
            rows = Counter()
            for lineno, raw in enumerate(reader, start=2):
                if not raw:
                    raw = [""]  # blank line: one empty field
                if len(raw) != len(schema):
                    raise ArityMismatch(
                        f"{path}:{lineno}: expected {len(schema)} fields, "
                        f"got {len(raw)}")
                rows[tuple(_parse_value(v) for v in raw)] += 1
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return Relation(schema, rows)


def write_csv(rel: Relation, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(rel.schema)
        for row in rel.expanded():
            writer.writerow(["" if v is None else v for v in row])


# ---------------------------------------------------------------------------
# Core operators
# ---------------------------------------------------------------------------

def select_rows(rel: Relation, attr: str, comparator: str, value) -> Relation:
    idx = rel.column(attr)
    rows = Counter()
    for row, count in rel.rows.items():
        if _compare(row[idx], comparator, value):
            rows[row] += count
    return Relation(rel.schema, rows)


def _compare(cell, comparator: str, value) -> bool:
    if cell is None or value is None:
        return False
    if isinstance(cell, int) != isinstance(value, int):
        return False
    if comparator == "=":
        return cell == value
    if comparator == "<>":
        return cell != value
    if comparator == "<":
        return cell < value
    if comparator == "<=":
        return cell <= value
    if comparator == ">":
        return cell > value
    if comparator == ">=":
        return cell >= value
    raise EngineError(f"unknown comparator {comparator!r}")


def semi_join(left: Relation, right: Relation, keys) -> Relation:
    """Left tuples with at least one right match on all keys; multiplicities
    of surviving tuples are preserved exactly.  `keys` pairs (left attribute,
    right attribute); null keys never match."""
    pairs = [(left.column(a), right.column(b)) for a, b in keys]
    if not pairs:
        if right.cardinality() == 0:
            return Relation(left.schema)
        return Relation(left.schema, Counter(left.rows))
    right_keys = set()
    for row in right.rows:
        key = tuple(row[j] for _, j in pairs)
        if None not in key:
            right_keys.add(key)
    rows = Counter()
    for row, count in left.rows.items():
        key = tuple(row[i] for i, _ in pairs)
        if None not in key and key in right_keys:
            rows[row] += count
    return Relation(left.schema, rows)


def natural_join(left: Relation, right: Relation) -> Relation:
    """Bag join on shared attribute names; output multiplicity is the
    product of matching multiplicities; null keys never match."""
    shared = [c for c in left.schema if c in right.schema]
    right_extra = [c for c in right.schema if c not in shared]
    schema = tuple(left.schema) + tuple(right_extra)
    l_idx = [left.column(c) for c in shared]
    r_idx = [right.column(c) for c in shared]
    r_extra_idx = [right.column(c) for c in right_extra]
    index: dict = {}
    for row, count in right.rows.items():
        key = tuple(row[j] for j in r_idx)
        if None in key:
            continue
        index.setdefault(key, []).append(
            (tuple(row[j] for j in r_extra_idx), count))
    rows = Counter()
    for row, count in left.rows.items():
        key = tuple(row[i] for i in l_idx)
        if None in key:
            continue
        for extra, rcount in index.get(key, ()):
            rows[row + extra] += count * rcount
    return Relation(schema, rows)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _agg_raw(func: str, values: list):
    """SQL aggregate over non-null values (already filtered); empty -> null
    except COUNT.  AVG yields an exact Fraction."""
    if func == "COUNT":
        return len(values)
    if not values:
        return None
    if func in ("MIN", "MAX"):
        kinds = {isinstance(v, int) for v in values}
        if len(kinds) > 1:
            raise AggregateTypeError(f"{func} over mixed value types")
        return min(values) if func == "MIN" else max(values)
    if any(not isinstance(v, int) for v in values):
        raise AggregateTypeError(f"{func} needs integer input")
    if func == "SUM":
        return sum(values)
    if func == "AVG":
        return Fraction(sum(values), len(values))
    raise EngineError(f"unknown aggregate {func!r}")


def render_fraction(value: Fraction) -> str:
    dec = Decimal(value.numerator) / Decimal(value.denominator)
    return str(dec.quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN))


def _group_rows(rel: Relation, grouping) -> dict:
    g_idx = [rel.column(a) for a in grouping]
    groups: dict = {}
    for row, count in rel.rows.items():
        key = tuple(row[i] for i in g_idx)
        groups.setdefault(key, []).append((row, count))
    return groups


def _aggregate_raw(rel: Relation, grouping, aggs, distinct_input: bool):
    """Group and compute raw aggregate values (AVG stays a Fraction)."""
    if distinct_input:
        rel = distinct(rel)
    grouping = tuple(grouping)
    agg_idx = [rel.column(a.var) for a in aggs]
    out_rows = []
    groups = _group_rows(rel, grouping)
    if not grouping and not groups and aggs:
        # global aggregate over empty input: one row of nulls, COUNT -> 0
        out_rows.append(((), tuple(0 if a.func == "COUNT" else None
                                   for a in aggs)))
        return grouping, out_rows
    for key in sorted(groups, key=_row_sort_key):
        members = groups[key]
        values = []
        for pos, agg in zip(agg_idx, aggs):
            cells = []
            for row, count in members:
                cell = row[pos]
                if cell is None:
                    continue
                cells.extend([cell] * (1 if agg.distinct else count))
            if agg.distinct:
                cells = sorted(set(cells), key=_value_sort_key)
            values.append(_agg_raw(agg.func, cells))
        out_rows.append((key, tuple(values)))
    return grouping, out_rows


def aggregate(rel: Relation, grouping, aggs, distinct_input: bool = False) -> Relation:
    """Group by `grouping` and apply the aggregate calls; with nonempty
    grouping, empty groups never appear.  AVG renders as a decimal string
    with six fractional digits."""
    aggs = tuple(aggs)
    grouping, raw = _aggregate_raw(rel, grouping, aggs, distinct_input)
    schema = tuple(grouping) + tuple(a.column_name() for a in aggs)
    rows = Counter()
    for key, values in raw:
        rendered = tuple(render_fraction(v) if isinstance(v, Fraction) else v
                         for v in values)
        rows[key + rendered] += 1
    return Relation(schema, rows)


# ---------------------------------------------------------------------------
# Shared FINALIZE semantics
# ---------------------------------------------------------------------------

def _empty_output(fin: Finalize) -> Relation:
    return Relation(tuple(c.name for c in fin.output))

def _finalize_relation(rel: Optional[Relation], fin: Finalize) -> Relation:
    if fin.source is None or rel is None:
        return _empty_output(fin)
    if fin.project_first:
        rel = project(rel, fin.project_first)
    if fin.distinct_input:
        rel = distinct(rel)

    boolean = any(c.kind == "one" for c in fin.output)
    calls = list(fin.aggregates)
    if fin.having is not None and fin.having.call not in calls:
        calls.append(fin.having.call)

    if fin.group_by or calls:
        grouping, raw = _aggregate_raw(rel, fin.group_by, tuple(calls), False)
        agg_pos = {c.column_name(): i for i, c in enumerate(calls)}
        rows = Counter()
        for key, values in raw:
            if fin.having is not None:
                hv = values[agg_pos[fin.having.call.column_name()]]
                if isinstance(hv, Fraction):
                    ok = _compare_fraction(hv, fin.having.comparator,
                                           fin.having.value)
                else:
                    ok = _compare(hv, fin.having.comparator, fin.having.value)
                if not ok:
                    continue
            out_row = []
            for col in fin.output:
                if col.kind == "var":
                    out_row.append(key[grouping.index(col.name)])
                elif col.kind == "agg":
                    value = values[agg_pos[col.name]]
                    if isinstance(value, Fraction):
                        value = render_fraction(value)
                    out_row.append(value)
                else:
                    out_row.append(1)
            rows[tuple(out_row)] += 1
        result = Relation(tuple(c.name for c in fin.output), rows)
    elif boolean:
        rows = Counter({(1,): 1}) if rel.cardinality() else Counter()
        result = Relation(("one",), rows)
    else:
        result = project(rel, tuple(c.name for c in fin.output))
    if fin.distinct_output:
        result = distinct(result)
    return result


def _compare_fraction(value: Fraction, comparator: str, constant) -> bool:
    if not isinstance(constant, int):
        return False
    other = Fraction(constant)
    if comparator == "=":
        return value == other
    if comparator == "<>":
        return value != other
    if comparator == "<":
        return value < other
    if comparator == "<=":
        return value <= other
    if comparator == ">":
        return value > other
    if comparator == ">=":
        return value >= other
    raise EngineError(f"unknown comparator {comparator!r}")


# ---------------------------------------------------------------------------
# Atom preparation (shared row-level primitive)
# ---------------------------------------------------------------------------

def prepare_atom(rel: Relation, atom, selections, keep=None) -> Relation:
    """Apply constant selections and intra-atom equalities, then project to
    the atom's variables (renaming attributes to variable names)."""
    out = rel
    for sel in selections:
        out = select_rows(out, sel.attr, sel.comparator, sel.value)
    for v in sorted(atom.variables):
        sources = atom.sources_of(v)
        for a, b in zip(sources, sources[1:]):
            ia, ib = out.column(a), out.column(b)
            rows = Counter()
            for row, count in out.rows.items():
                if row[ia] is not None and row[ia] == row[ib]:
                    rows[row] += count
            out = Relation(out.schema, rows)
    variables = sorted(atom.variables if keep is None else atom.variables & keep)
    columns = [(atom.sources_of(v)[0], v) for v in variables]
    out = project(out, tuple(attr for attr, _ in columns))
    return Relation(tuple(v for _, v in columns), out.rows)


# ---------------------------------------------------------------------------
# Naive oracle
# ---------------------------------------------------------------------------

@dataclass
class NaiveStats:
    step_rows: tuple = ()

    @property
    def max_intermediate(self) -> int:
        return max(self.step_rows, default=0)


def _naive_join_all(cq: ConjunctiveQuery, db: Mapping[str, Relation]):
    """Selections then pairwise joins in declaration order; returns the full
    renamed join and the per-step cardinalities."""
    joined: Optional[Relation] = None
    steps = []
    for atom in cq.atoms:
        if atom.relation not in db:
            raise MissingRelation(f"relation {atom.relation!r} not in database")
        prepared = prepare_atom(db[atom.relation], atom,
                                cq.selections_of(atom.atom_id))
        joined = prepared if joined is None else natural_join(joined, prepared)
        steps.append(joined.cardinality())
    if joined is None:
        raise MissingRelation("query has no atoms")
    return joined, steps


def eval_naive(cq: ConjunctiveQuery, db: Mapping[str, Relation]) -> Relation:
    """Reference semantics: no reordering, no reduction, then FINALIZE."""
    result, _ = eval_naive_traced(cq, db)
    return result


def eval_naive_traced(cq: ConjunctiveQuery, db: Mapping[str, Relation]):
    from .plan_builder import finalize_spec

    form = normalize_aggregation(cq)
    fin = finalize_spec(form, None if cq.statically_empty else "naive",
                        Mode.FULL_ENUM, None)
    if cq.statically_empty:
        return _finalize_relation(None, fin), NaiveStats(())
    joined, steps = _naive_join_all(cq, db)
    return _finalize_relation(joined, fin), NaiveStats(tuple(steps))


# ---------------------------------------------------------------------------
# Plan interpreter
# ---------------------------------------------------------------------------

@dataclass
class StageStats:
    statement_rows: dict = field(default_factory=dict)
    statement_micros: dict = field(default_factory=dict)
    stage_max_rows: dict = field(default_factory=dict)
    stage_micros: dict = field(default_factory=dict)
    skipped_stages: tuple = ()

    def max_intermediate(self) -> int:
        return max(self.statement_rows.values(), default=0)

    def to_text(self) -> str:
        lines = [f"{name}\t{rows}\t{self.statement_micros.get(name, 0)}"
                 for name, rows in self.statement_rows.items()]
        return "\n".join(lines)


@dataclass
class EvalResult:
    relation: Relation
    stats: StageStats
    handles: dict


def _lookup(env: dict, handle: str) -> Relation:
    try:
        return env[handle]
    except KeyError:
        raise PlanReferenceError(f"undefined handle {handle!r}") from None


def eval_plan(plan: StagePlan, db: Mapping[str, Relation],
              short_circuit: bool = False) -> EvalResult:
    """Interpret the plan statement by statement.

    With `short_circuit`, the SEMIJOIN_DOWN and JOIN stages are skipped when
    every tree root is empty after the bottom-up pass; FINALIZE still runs
    (a global aggregate over an empty join yields one row of nulls).
    """
    env: dict = {}
    stats = StageStats()
    result: Optional[Relation] = None
    skipped: list = []
    abort_tail = False

    def run_body(body):
        if isinstance(body, BaseScan):
            return _eval_scan(body, db)
        if isinstance(body, ViewJoin):
            joined = None
            for scan in body.scans:
                rel = _eval_scan(scan, db)
                joined = rel if joined is None else natural_join(joined, rel)
            return project(joined, body.project)
        if isinstance(body, SemiJoin):
            rel = _lookup(env, body.source)
            for f in body.filters:
                rel = semi_join(rel, _lookup(env, f.handle),
                                [(k, k) for k in f.keys])
            return rel
        if isinstance(body, NaturalJoin):
            joined = None
            for handle in body.inputs:
                rel = _lookup(env, handle)
                joined = rel if joined is None else natural_join(joined, rel)
            return project(joined, body.project)
        raise PlanReferenceError(f"unexpected body {body!r}")

    for kind in StageKind:
        statements = plan.stage(kind)
        if abort_tail and kind in (StageKind.SEMIJOIN_DOWN, StageKind.JOIN):
            if statements:
                skipped.append(kind.value)
            continue
        started = time.perf_counter_ns()
        max_rows = 0
        for stmt in statements:
            t0 = time.perf_counter_ns()
            if kind is StageKind.FINALIZE:
                source = None
                fin: Finalize = stmt.body
                if fin.source is not None:
                    if abort_tail:
                        schema = _finalize_input_schema(plan, fin)
                        source = Relation(schema)
                    else:
                        source = _lookup(env, fin.source)
                rel = _finalize_relation(source, fin)
                result = rel
            else:
                rel = run_body(stmt.body)
                env[stmt.name] = rel
            micros = (time.perf_counter_ns() - t0) // 1000
            stats.statement_rows[stmt.name] = rel.cardinality()
            stats.statement_micros[stmt.name] = micros
            max_rows = max(max_rows, rel.cardinality())
        stats.stage_max_rows[kind.value] = max_rows
        stats.stage_micros[kind.value] = \
            (time.perf_counter_ns() - started) // 1000
        if kind is StageKind.SEMIJOIN_UP and short_circuit:
            # a tree root empty after the up pass empties the whole result
            for node in plan.roots:
                handle = plan.node_handle_after(node, StageKind.SEMIJOIN_UP)
                if env[handle].cardinality() == 0:
                    abort_tail = True
    stats.skipped_stages = tuple(skipped)
    if result is None:
        raise PlanReferenceError("plan has no FINALIZE statement")
    return EvalResult(result, stats, env)


def _finalize_input_schema(plan: StagePlan, fin: Finalize) -> tuple:
    if fin.project_first:
        return tuple(fin.project_first)
    return ()


def _eval_scan(scan: BaseScan, db: Mapping[str, Relation]) -> Relation:
    if scan.relation not in db:
        raise MissingRelation(f"relation {scan.relation!r} not in database")
    rel = db[scan.relation]
    for sel in scan.selections:
        rel = select_rows(rel, sel.attr, sel.comparator, sel.value)
    for a, b in scan.attr_equalities:
        ia, ib = rel.column(a), rel.column(b)
        rows = Counter()
        for row, count in rel.rows.items():
            if row[ia] is not None and row[ia] == row[ib]:
                rows[row] += count
        rel = Relation(rel.schema, rows)
    projected = project(rel, tuple(attr for attr, _ in scan.columns))
    return Relation(tuple(var for _, var in scan.columns), projected.rows)


# ---------------------------------------------------------------------------
# Full-reducer check
# ---------------------------------------------------------------------------

def full_reducer_holds(handles: Mapping[str, Relation], cq: ConjunctiveQuery,
                       db: Mapping[str, Relation]) -> bool:
    """True iff every tuple of every per-node handle appears in the
    projection of the full (unreduced) join onto that handle's schema."""
    full, _ = _naive_join_all(cq, db)
    for rel in handles.values():
        if not rel.schema:
            if rel.cardinality() and full.cardinality() == 0:
                return False
            continue
        allowed = set(project(full, rel.schema).rows)
        if any(row not in allowed for row in rel.rows):
            return False
    return True
