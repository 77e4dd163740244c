"""Aggregation normal form and the 0MA (zero-materialisation answerable) check.

A query in aggregation normal form is gamma_U(pi_S(Q')) with Q' a pure
join-plus-selection query.  It is 0MA when it is guarded (one atom contains
all of S) and set-safe (duplicate elimination before grouping does not
change the answer).  Such queries need only the bottom-up semi-join pass:
the final aggregate runs over the reduced guard relation alone.

Set-safety here is a conservative syntactic whitelist: MIN/MAX aggregates,
DISTINCT aggregates, explicit DISTINCT projection, and Boolean queries.
Plain SUM/COUNT/AVG are reported as not safe; reasoning from schema
constraints (keys) is out of scope and surfaces only as a report note.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .sql_frontend import ConjunctiveQuery


class SetSafety(str, Enum):
    MIN_MAX = "MinMax"
    DISTINCT_AGGREGATE = "DistinctAggregate"
    DISTINCT_PROJECTION = "DistinctProjection"
    BOOLEAN_QUERY = "BooleanQuery"
    NOT_SAFE = "NotSafe"


@dataclass(frozen=True)
class AggregationForm:
    inner: ConjunctiveQuery      # joins + selections only
    projection_vars: tuple       # S
    output_vars: tuple           # bare select columns, user order
    grouping_vars: tuple
    aggregates: tuple
    having: Optional[object]
    distinct: bool
    select_one: bool


@dataclass(frozen=True)
class ZeroMAReport:
    guarded: bool
    guards: tuple
    set_safe: bool
    set_safe_reason: SetSafety
    not_safe_cause: Optional[str]
    is_0ma: bool
    chosen_root: Optional[str]
    notes: tuple

    def reason_text(self) -> str:
        if self.set_safe_reason is SetSafety.NOT_SAFE:
            return f"NotSafe({self.not_safe_cause})"
        return self.set_safe_reason.value

    def to_text(self) -> str:
        lines = [
            f"guarded: {'yes' if self.guarded else 'no'}",
            f"guards: {' '.join(self.guards) if self.guards else '-'}",
            f"set-safe: {'yes' if self.set_safe else 'no'} ({self.reason_text()})",
            f"0MA: {'yes' if self.is_0ma else 'no'}",
        ]
        if self.chosen_root:
            lines.append(f"guard: {self.chosen_root}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def normalize_aggregation(cq: ConjunctiveQuery) -> AggregationForm:
    """Split the CQ into inner joins+selections and the grouping structure.

    S collects grouping, output, and aggregate variables; a HAVING clause is
    retained as a post-filter over the aggregate outputs.
    """
    inner = replace(
        cq,
        output_vars=cq.projection_vars(),
        grouping_vars=(),
        aggregates=(),
        having=None,
        distinct=False,
        select_one=False,
    )
    return AggregationForm(
        inner=inner,
        projection_vars=cq.projection_vars(),
        output_vars=cq.output_vars,
        grouping_vars=cq.grouping_vars,
        aggregates=cq.aggregates,
        having=cq.having,
        distinct=cq.distinct,
        select_one=cq.select_one,
    )


def find_guards(form: AggregationForm) -> tuple:
    """Atoms whose variables cover all of S, lexicographically sorted."""
    needed = frozenset(form.projection_vars)
    return tuple(sorted(
        a.atom_id for a in form.inner.atoms if needed <= a.variables))


def set_safety(form: AggregationForm):
    calls = list(form.aggregates)
    if form.having is not None:
        calls.append(form.having.call)
    if calls:
        for call in calls:
            if not call.distinct and call.func not in ("MIN", "MAX"):
                return False, SetSafety.NOT_SAFE, call.func
        if all(c.func in ("MIN", "MAX") and not c.distinct for c in calls):
            return True, SetSafety.MIN_MAX, None
        if all(c.distinct for c in calls):
            return True, SetSafety.DISTINCT_AGGREGATE, None
        # mixed MIN/MAX and DISTINCT aggregates: each is individually safe
        return True, SetSafety.DISTINCT_AGGREGATE, None
    if form.select_one and not form.projection_vars:
        return True, SetSafety.BOOLEAN_QUERY, None
    if form.distinct:
        return True, SetSafety.DISTINCT_PROJECTION, None
    if form.grouping_vars:
        # GROUP BY without aggregates enumerates distinct groups
        return True, SetSafety.DISTINCT_PROJECTION, None
    return False, SetSafety.NOT_SAFE, "plain projection"


def classify_0ma(form: AggregationForm) -> ZeroMAReport:
    guards = find_guards(form)
    guarded = bool(guards)
    set_safe, reason, cause = set_safety(form)
    is_0ma = guarded and set_safe
    notes = []
    if guarded and not set_safe:
        notes.append("guarded but not set-safe; schema constraints might "
                     "still allow duplicate elimination (not checked)")
    if set_safe and not guarded:
        notes.append("set-safe but unguarded; joins can be restricted to a "
                     "covering subtree")
    return ZeroMAReport(
        guarded=guarded,
        guards=guards,
        set_safe=set_safe,
        set_safe_reason=reason,
        not_safe_cause=cause,
        is_0ma=is_0ma,
        chosen_root=guards[0] if is_0ma else None,
        notes=tuple(notes),
    )
