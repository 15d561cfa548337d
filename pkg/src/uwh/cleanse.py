"""Stage 2: scrub and data cleansing.

Rule-driven repair and standardization, exact-duplicate collapse, and
foreign-key reconciliation. Rules are pure cell transformations applied
in listed order; anything a rule cannot repair quarantines its row, so
no anomaly survives silently into cleansed staging.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal

from .errors import ParseError, ValidationError
from .lexer import tokenize
from .schema import Table, TableSchema, check_referential_integrity, check_row
from .staging import DEFAULT_TIMESTAMP, LineageEvent, QRow, StagingArea
from .values import (
    RawCell,
    ValueType,
    make_decimal,
    parse_date_flexible,
    parse_iso_date,
    parse_typed,
    render_cell,
    value_tag,
)

RULE_KINDS = ("trim", "collapse_whitespace", "case", "normalize_date", "null_standardize", "domain", "range")

_CASE_MODES = ("upper", "lower", "title")
_DATE_FORMATS = ("iso", "day_first", "month_first", "month_name")

_WORD_RE = re.compile(r"[A-Za-z]+")
_WS_RUN_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class CleanseRule:
    table: str
    column: str
    kind: str
    args: tuple = ()

    def label(self) -> str:
        args = "" if not self.args else "(" + ", ".join(render_cell(a) for a in self.args) + ")"
        return f"{self.table}.{self.column} {self.kind}{args}"


def make_rule(table: str, column: str, kind: str, args: tuple) -> CleanseRule:
    """Arg-shape validation; raises ValueError on a malformed rule."""
    if kind not in RULE_KINDS:
        raise ValueError(f"unknown rule kind {kind!r}")
    args = tuple(args)
    if kind in ("trim", "collapse_whitespace") and args:
        raise ValueError(f"{kind} takes no arguments")
    if kind == "case":
        if len(args) != 1 or args[0] not in _CASE_MODES:
            raise ValueError(f"case needs one of {_CASE_MODES}")
    if kind == "normalize_date":
        if not args or any(a not in _DATE_FORMATS for a in args):
            raise ValueError(f"normalize_date needs a priority list drawn from {_DATE_FORMATS}")
    if kind == "null_standardize":
        if not args or any(not isinstance(a, str) for a in args):
            raise ValueError("null_standardize needs one or more text tokens")
    if kind == "domain":
        if not args:
            raise ValueError("domain needs at least one allowed value")
    if kind == "range":
        if len(args) != 2 or any(isinstance(a, bool) or not isinstance(a, (int, Decimal)) for a in args):
            raise ValueError("range needs two numeric bounds")
        if args[0] > args[1]:
            raise ValueError("range bounds must satisfy min <= max")
    return CleanseRule(table, column, kind, args)


def _coerce_arg(value, vtype: ValueType):
    tag = value_tag(value)
    if tag is vtype:
        return value
    if vtype is ValueType.DECIMAL and tag is ValueType.INTEGER:
        return make_decimal(value)
    if vtype is ValueType.DATE and tag is ValueType.TEXT:
        return parse_iso_date(value)
    raise ValueError(f"argument {value!r} is not a {vtype.value}")


def check_rule(rule: CleanseRule, schema: TableSchema) -> CleanseRule:
    """Type-compatibility against the column; returns the rule with coerced args."""
    if not schema.has_column(rule.column):
        raise ValueError(f"{schema.name} has no column {rule.column!r}")
    col = schema.column(rule.column)
    if rule.kind == "case" and col.type is not ValueType.TEXT:
        raise ValueError(f"case applies to TEXT columns, {rule.column} is {col.type.value}")
    if rule.kind == "normalize_date" and col.type is not ValueType.DATE:
        raise ValueError(f"normalize_date applies to DATE columns, {rule.column} is {col.type.value}")
    if rule.kind == "range":
        if col.type not in (ValueType.INTEGER, ValueType.DECIMAL):
            raise ValueError(f"range applies to numeric columns, {rule.column} is {col.type.value}")
        return CleanseRule(rule.table, rule.column, rule.kind, tuple(_coerce_arg(a, col.type) for a in rule.args))
    if rule.kind == "domain":
        return CleanseRule(rule.table, rule.column, rule.kind, tuple(_coerce_arg(a, col.type) for a in rule.args))
    return rule


def _title_case(s: str) -> str:
    return _WORD_RE.sub(lambda m: m.group(0).capitalize(), s)


@dataclass(frozen=True)
class Anomaly:
    row_index: int
    column: str
    reason: str
    text: str


@dataclass
class RuleStats:
    rule: CleanseRule
    cells_examined: int = 0
    cells_changed: int = 0
    cells_quarantined: int = 0
    anomalies: list[Anomaly] = field(default_factory=list)


_SAME = ("same", None)


def _cell_fn(rule: CleanseRule, col_type: ValueType):
    """Per-cell transformation: ('same', _), ('changed', v), or ('anomaly', reason)."""
    kind = rule.kind

    if kind in ("trim", "collapse_whitespace"):
        def fix(s: str) -> str:
            return s.strip() if kind == "trim" else _WS_RUN_RE.sub(" ", s)

        def fn(cell):
            if isinstance(cell, RawCell):
                new = fix(str(cell))
                return _SAME if new == str(cell) else ("changed", RawCell(new))
            if col_type is ValueType.TEXT and isinstance(cell, str):
                new = fix(cell)
                return _SAME if new == cell else ("changed", new)
            return _SAME
        return fn

    if kind == "case":
        mode = rule.args[0]
        def fn(cell):
            if not isinstance(cell, str):
                return _SAME
            if mode == "upper":
                new = cell.upper()
            elif mode == "lower":
                new = cell.lower()
            else:
                new = _title_case(cell)
            return _SAME if new == cell else ("changed", new)
        return fn

    if kind == "normalize_date":
        priority = rule.args
        def fn(cell):
            if not isinstance(cell, RawCell):
                return _SAME
            parsed = parse_date_flexible(str(cell), priority)
            if parsed is None:
                return ("anomaly", "unparseable-date")
            return ("changed", parsed)
        return fn

    if kind == "null_standardize":
        tokens = set(rule.args)
        def fn(cell):
            if isinstance(cell, str) and cell.strip() in tokens:
                return ("changed", None)
            return _SAME
        return fn

    if kind == "domain":
        allowed = set(rule.args)
        def fn(cell):
            if cell is None:
                return _SAME
            if isinstance(cell, RawCell) or cell not in allowed:
                return ("anomaly", "out-of-domain")
            return _SAME
        return fn

    if kind == "range":
        lo, hi = rule.args
        def fn(cell):
            if cell is None:
                return _SAME
            if isinstance(cell, RawCell):
                return ("anomaly", "unparseable-number")
            if lo <= cell <= hi:
                return _SAME
            return ("anomaly", "out-of-range")
        return fn

    raise ValueError(f"unknown rule kind {kind!r}")


def apply_rule(table: Table, rule: CleanseRule) -> tuple[Table, RuleStats]:
    """Apply one rule to its column; anomalous rows are flagged, not removed.

    Raw cells whose repaired text now parses as the declared type become
    typed values (the raw marker is cleared).
    """
    if rule.table != table.name:
        raise ValidationError(f"rule {rule.label()} applied to table {table.name!r}")
    rule = check_rule(rule, table.schema)
    col_idx = table.schema.column_index(rule.column)
    col_type = table.schema.column(rule.column).type
    fn = _cell_fn(rule, col_type)
    stats = RuleStats(rule)
    rows: list[tuple] = []
    anomalies: list[Anomaly] = []
    for i, row in enumerate(table.rows):
        stats.cells_examined += 1
        verdict, new = fn(row[col_idx])
        if verdict == "same":
            rows.append(row)
            continue
        if verdict == "anomaly":
            anomalies.append(Anomaly(i, rule.column, new, render_cell(row[col_idx])))
            rows.append(row)
            continue
        if isinstance(new, RawCell) and col_type is not ValueType.TEXT:
            try:
                new = parse_typed(str(new), col_type)
            except ValueError:
                pass
        rows.append(row[:col_idx] + (new,) + row[col_idx + 1:])
        stats.cells_changed += 1
    stats.anomalies = anomalies
    return Table(table.schema, rows), stats


@dataclass
class TableCleanseSlice:
    table: str
    rows_in: int
    rows_out: int = 0
    rows_quarantined: int = 0
    rule_stats: list[RuleStats] = field(default_factory=list)
    quarantined: list[QRow] = field(default_factory=list)


def cleanse_table(table: Table, rules: list[CleanseRule]) -> tuple[Table, TableCleanseSlice]:
    """Apply rules in order, quarantining rows a rule flags; afterwards any
    row that still fails strict conformance (surviving raw cell, Null in a
    non-nullable column) is quarantined too."""
    slice_ = TableCleanseSlice(table.name, rows_in=len(table.rows))
    current = table
    for rule in rules:
        current, stats = apply_rule(current, rule)
        doomed = {a.row_index: a for a in stats.anomalies}
        if doomed:
            kept = []
            for i, row in enumerate(current.rows):
                if i in doomed:
                    a = doomed[i]
                    slice_.quarantined.append(
                        QRow(f"{a.reason}:{a.column}", tuple(render_cell(c) for c in row))
                    )
                    stats.cells_quarantined += 1
                else:
                    kept.append(row)
            current = Table(current.schema, kept)
        slice_.rule_stats.append(stats)
    kept = []
    for row in current.rows:
        issue = check_row(current.schema, row, allow_raw=False)
        if issue is None:
            kept.append(row)
        else:
            slice_.quarantined.append(QRow(str(issue), tuple(render_cell(c) for c in row)))
    current = Table(current.schema, kept)
    slice_.rows_out = len(current.rows)
    slice_.rows_quarantined = len(slice_.quarantined)
    if slice_.rows_in != slice_.rows_out + slice_.rows_quarantined:
        raise AssertionError(f"{table.name}: cleanse conservation violated")
    return current, slice_


@dataclass
class DedupSlice:
    table: str
    exact_removed: int = 0
    pk_conflicts: int = 0
    quarantined: list[QRow] = field(default_factory=list)


def dedup(table: Table) -> tuple[Table, DedupSlice]:
    """Collapse exact duplicates to their first occurrence; quarantine rows
    that repeat an earlier primary key with a different payload."""
    slice_ = DedupSlice(table.name)
    seen_rows: set[tuple] = set()
    seen_pks: set[tuple] = set()
    kept: list[tuple] = []
    for row in table.rows:
        if row in seen_rows:
            slice_.exact_removed += 1
            continue
        pk = table.pk_of(row)
        if pk in seen_pks:
            slice_.pk_conflicts += 1
            slice_.quarantined.append(QRow("pk-conflict", tuple(render_cell(c) for c in row)))
            continue
        seen_rows.add(row)
        seen_pks.add(pk)
        kept.append(row)
    return Table(table.schema, kept), slice_


@dataclass(frozen=True)
class ReconcilePolicy:
    """Per-FK orphan handling: quarantine the row or null its FK columns."""

    default: str = "quarantine"
    overrides: dict = field(default_factory=dict)

    def for_fk(self, label: str) -> str:
        return self.overrides.get(label, self.default)


@dataclass
class ReconcileStats:
    iterations: int = 0
    per_fk: dict = field(default_factory=dict)  # label -> {policy, quarantined, nullified}

    def bump(self, label: str, policy: str, action: str) -> None:
        entry = self.per_fk.setdefault(label, {"policy": policy, "quarantined": 0, "nullified": 0})
        entry[action] += 1


def _validate_policy(staging: StagingArea, policy: ReconcilePolicy) -> None:
    labels = {}
    for table in staging.tables.values():
        for fk in table.schema.foreign_keys:
            labels[fk.label(table.name)] = (table, fk)
    for label, action in policy.overrides.items():
        if action not in ("quarantine", "nullify"):
            raise ValidationError(f"unknown reconcile policy {action!r} for {label}")
        if label not in labels:
            raise ValidationError(f"reconcile policy names unknown foreign key {label!r}")
        if action == "nullify":
            table, fk = labels[label]
            for c in fk.columns:
                if not table.schema.column(c).nullable:
                    raise ValidationError(f"nullify policy on non-nullable column {table.name}.{c}")
    if policy.default not in ("quarantine", "nullify"):
        raise ValidationError(f"unknown default reconcile policy {policy.default!r}")


def reconcile_foreign_keys(
    staging: StagingArea, policy: ReconcilePolicy | None = None, *, timestamp: str = DEFAULT_TIMESTAMP
) -> tuple[StagingArea, ReconcileStats]:
    """Quarantine or nullify every orphan FK row until the orphan report is
    empty. Quarantining can orphan dependents, hence the fixpoint loop."""
    policy = policy or ReconcilePolicy()
    _validate_policy(staging, policy)
    staging = staging.clone()
    stats = ReconcileStats()
    while True:
        report = check_referential_integrity(staging.tables)
        if report.is_empty():
            break
        stats.iterations += 1
        drops: dict[str, set[int]] = {}
        nulls: dict[str, dict[int, set[int]]] = {}
        fk_of_row: dict[tuple[str, int], str] = {}
        for entry in report.entries:
            table = staging.tables[entry.table]
            action = policy.for_fk(entry.fk)
            if action == "nullify":
                fk = next(f for f in table.schema.foreign_keys if f.label(entry.table) == entry.fk)
                if all(table.schema.column(c).nullable for c in fk.columns):
                    cols = {table.schema.column_index(c) for c in fk.columns}
                    nulls.setdefault(entry.table, {}).setdefault(entry.row_index, set()).update(cols)
                    stats.bump(entry.fk, action, "nullified")
                    continue
                raise ValidationError(f"nullify policy on non-nullable FK {entry.fk}")
            drops.setdefault(entry.table, set()).add(entry.row_index)
            fk_of_row[(entry.table, entry.row_index)] = entry.fk
            stats.bump(entry.fk, action, "quarantined")
        for name in set(drops) | set(nulls):
            table = staging.tables[name]
            doomed = drops.get(name, set())
            nullable_fixes = nulls.get(name, {})
            rows = []
            for i, row in enumerate(table.rows):
                if i in doomed:
                    label = fk_of_row[(name, i)]
                    staging.add_quarantine(
                        name, table.schema.column_names, f"orphan:{label}", tuple(render_cell(c) for c in row)
                    )
                    continue
                if i in nullable_fixes:
                    row = tuple(None if j in nullable_fixes[i] else c for j, c in enumerate(row))
                rows.append(row)
            staging.tables[name] = Table(table.schema, rows)
    if stats.per_fk:  # no orphans leaves the staging byte-identical
        staging.log(
            LineageEvent(
                "reconcile",
                "",
                f"iterations={stats.iterations} fks={len(stats.per_fk)}",
                sum(e["quarantined"] + e["nullified"] for e in stats.per_fk.values()),
                timestamp,
            )
        )
    return staging, stats


@dataclass
class CleanseReport:
    tables: dict = field(default_factory=dict)  # name -> TableCleanseSlice summary
    dedup: dict = field(default_factory=dict)
    reconcile: dict = field(default_factory=dict)
    reconcile_iterations: int = 0

    def to_json_dict(self) -> dict:
        return {
            "tables": {
                name: {
                    "rows_in": s["rows_in"],
                    "rows_out": s["rows_out"],
                    "rows_quarantined": s["rows_quarantined"],
                    "rules": s["rules"],
                }
                for name, s in sorted(self.tables.items())
            },
            "dedup": dict(sorted(self.dedup.items())),
            "reconcile": {"iterations": self.reconcile_iterations, "foreign_keys": dict(sorted(self.reconcile.items()))},
        }

    def to_text(self) -> str:
        lines = ["cleanse report", "=============="]
        total_changed = total_quarantined = 0
        for name, s in self.tables.items():
            lines.append(f"{name}: in={s['rows_in']} out={s['rows_out']} quarantined={s['rows_quarantined']}")
            for r in s["rules"]:
                if r["cells_changed"] or r["cells_quarantined"]:
                    lines.append(
                        f"  {r['rule']}: examined={r['cells_examined']}"
                        f" changed={r['cells_changed']} quarantined={r['cells_quarantined']}"
                    )
                total_changed += r["cells_changed"]
                total_quarantined += r["cells_quarantined"]
        for name, d in self.dedup.items():
            if d["exact_removed"] or d["pk_conflicts"]:
                lines.append(f"{name}: duplicates removed={d['exact_removed']} pk conflicts={d['pk_conflicts']}")
        for label, e in self.reconcile.items():
            if e["quarantined"] or e["nullified"]:
                lines.append(f"{label}: policy={e['policy']} quarantined={e['quarantined']} nullified={e['nullified']}")
        lines.append(f"total cells changed={total_changed} cells quarantined={total_quarantined}")
        return "\n".join(lines) + "\n"


def total_cells_changed(report: CleanseReport) -> int:
    return sum(r["cells_changed"] for s in report.tables.values() for r in s["rules"])


def cleanse_staging(
    staging: StagingArea,
    rules: list[CleanseRule],
    policy: ReconcilePolicy | None = None,
    *,
    timestamp: str = DEFAULT_TIMESTAMP,
) -> tuple[StagingArea, CleanseReport]:
    """Whole-staging pass: per-table rules then dedup, then FK reconciliation."""
    for rule in rules:
        if rule.table not in staging.tables:
            raise ValidationError(f"rule {rule.label()} names unknown table {rule.table!r}")
        check_rule(rule, staging.tables[rule.table].schema)

    staging = staging.clone()
    report = CleanseReport()
    for name in list(staging.tables):
        table = staging.tables[name]
        table_rules = [r for r in rules if r.table == name]
        cleaned, slice_ = cleanse_table(table, table_rules)
        for qr in slice_.quarantined:
            staging.add_quarantine(name, table.schema.column_names, qr.reason, qr.fields)
        deduped, dslice = dedup(cleaned)
        for qr in dslice.quarantined:
            staging.add_quarantine(name, table.schema.column_names, qr.reason, qr.fields)
        staging.tables[name] = deduped
        report.tables[name] = {
            "rows_in": slice_.rows_in,
            "rows_out": len(deduped.rows),
            "rows_quarantined": slice_.rows_quarantined,
            "rules": [
                {
                    "rule": s.rule.label(),
                    "kind": s.rule.kind,
                    "cells_examined": s.cells_examined,
                    "cells_changed": s.cells_changed,
                    "cells_quarantined": s.cells_quarantined,
                }
                for s in slice_.rule_stats
            ],
        }
        report.dedup[name] = {"exact_removed": dslice.exact_removed, "pk_conflicts": dslice.pk_conflicts}
        staging.log(
            LineageEvent(
                "cleanse",
                name,
                f"in={slice_.rows_in} out={len(deduped.rows)}"
                f" quarantined={slice_.rows_quarantined} deduped={dslice.exact_removed + dslice.pk_conflicts}",
                len(deduped.rows),
                timestamp,
            )
        )
    staging, rstats = reconcile_foreign_keys(staging, policy, timestamp=timestamp)
    report.reconcile = rstats.per_fk
    report.reconcile_iterations = rstats.iterations
    staging.reports["cleanse"] = report.to_json_dict()
    return staging, report


def parse_rules(text: str) -> list[CleanseRule]:
    """Rules file: CLEAN statements in the plan DSL's surface grammar."""
    tokens = tokenize(text)
    rules: list[CleanseRule] = []
    pos = 0

    def expect(cond: bool, what: str):
        tok = tokens[pos]
        if not cond:
            raise ParseError(f"expected {what}, found {tok.describe()}", tok.line, tok.column)

    while tokens[pos].kind != "eof":
        tok = tokens[pos]
        expect(tok.kind == "kw" and tok.norm == "CLEAN", "CLEAN")
        pos += 1
        expect(tokens[pos].kind == "ident", "table name")
        table = tokens[pos].lexeme
        pos += 1
        expect(tokens[pos].kind == "symbol" and tokens[pos].lexeme == ".", "'.'")
        pos += 1
        expect(tokens[pos].kind == "ident", "column name")
        column = tokens[pos].lexeme
        pos += 1
        expect(tokens[pos].kind == "kw" and tokens[pos].norm == "WITH", "WITH")
        pos += 1
        expect(tokens[pos].kind == "ident", "rule kind")
        kind_tok = tokens[pos]
        kind = kind_tok.lexeme
        pos += 1
        args: list = []
        if tokens[pos].kind == "symbol" and tokens[pos].lexeme == "(":
            pos += 1
            while True:
                tok = tokens[pos]
                if tok.kind == "number":
                    args.append(make_decimal(tok.lexeme) if "." in tok.lexeme else int(tok.lexeme))
                elif tok.kind == "string":
                    args.append(tok.lexeme)
                elif tok.kind == "kw" and tok.norm in ("TRUE", "FALSE", "NULL"):
                    args.append({"TRUE": True, "FALSE": False, "NULL": None}[tok.norm])
                else:
                    raise ParseError(f"expected literal, found {tok.describe()}", tok.line, tok.column)
                pos += 1
                if tokens[pos].kind == "symbol" and tokens[pos].lexeme == ",":
                    pos += 1
                    continue
                expect(tokens[pos].kind == "symbol" and tokens[pos].lexeme == ")", "')'")
                pos += 1
                break
        expect(tokens[pos].kind == "symbol" and tokens[pos].lexeme == ";", "';'")
        pos += 1
        try:
            rules.append(make_rule(table, column, kind, tuple(args)))
        except ValueError as exc:
            raise ValidationError(f"line {kind_tok.line}: {exc}") from exc
    return rules
