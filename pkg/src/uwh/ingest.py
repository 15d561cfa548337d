"""Stage 1: capture and extract.

Reads one CSV per schema table, coerces cells to their declared types,
and populates the staging buffer. Structural faults (wrong field count,
Null in a non-nullable column) quarantine the row immediately; cells
that merely fail their type parse stage as raw text for the cleansing
stage to repair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .csvio import parse_csv
from .errors import MissingInputError, ValidationError
from .schema import DatabaseSchema, Table, TableSchema
from .staging import DEFAULT_TIMESTAMP, LineageEvent, QRow, Quarantine, StagingArea, parse_cell
from .values import RawCell


@dataclass
class TableExtraction:
    table: str
    rows_read: int = 0
    rows_staged: int = 0
    rows_rejected: int = 0
    raw_cells: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rows_rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


@dataclass
class ExtractionReport:
    tables: dict[str, TableExtraction] = field(default_factory=dict)

    def check_conservation(self) -> None:
        for t in self.tables.values():
            if t.rows_read != t.rows_staged + t.rows_rejected:
                raise AssertionError(f"{t.table}: read {t.rows_read} != staged {t.rows_staged} + rejected {t.rows_rejected}")

    def to_json_dict(self) -> dict:
        return {
            name: {
                "rows_read": t.rows_read,
                "rows_staged": t.rows_staged,
                "rows_rejected": t.rows_rejected,
                "raw_cells": t.raw_cells,
                "reasons": dict(sorted(t.reasons.items())),
            }
            for name, t in sorted(self.tables.items())
        }


def extract_table(source: str | bytes, schema: TableSchema) -> tuple[Table, TableExtraction, Quarantine]:
    """Extract one table from CSV text or bytes.

    The header must name exactly the schema's columns, in any order;
    staged rows are normalized to schema order.
    """
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ValidationError(f"{schema.name}: input is not valid UTF-8: {exc}") from exc
    records = parse_csv(source)
    if not records:
        raise ValidationError(f"{schema.name}: missing header row")
    header = [t for t, _ in records[0]]
    expected = set(schema.column_names)
    seen: set[str] = set()
    for name in header:
        if name not in expected:
            raise ValidationError(f"{schema.name}: unknown header column {name!r}")
        if name in seen:
            raise ValidationError(f"{schema.name}: duplicate header column {name!r}")
        seen.add(name)
    missing = expected - seen
    if missing:
        raise ValidationError(f"{schema.name}: missing header column(s) {sorted(missing)}")
    # position of each schema column in the file
    order = [header.index(c) for c in schema.column_names]

    stats = TableExtraction(schema.name)
    quarantine = Quarantine(schema.column_names)
    rows: list[tuple] = []
    ncols = len(schema.columns)
    for rec in records[1:]:
        stats.rows_read += 1
        if len(rec) != ncols:
            stats.reject("arity")
            quarantine.rows.append(QRow("arity", tuple(t for t, _ in rec)))
            continue
        cells = []
        issue = None
        for col, pos in zip(schema.columns, order):
            text, quoted = rec[pos]
            cell = parse_cell(text, quoted, col.type)
            if cell is None and not col.nullable:
                issue = f"null-in-nonnullable:{col.name}"
                break
            if isinstance(cell, RawCell):
                stats.raw_cells += 1
            cells.append(cell)
        if issue is not None:
            stats.reject(issue.split(":", 1)[0])
            quarantine.rows.append(QRow(issue, tuple(rec[pos][0] for pos in order)))
            continue
        rows.append(tuple(cells))
        stats.rows_staged += 1
    return Table(schema, rows), stats, quarantine


def extract_database(
    src_dir: Path, db: DatabaseSchema, *, timestamp: str = DEFAULT_TIMESTAMP
) -> tuple[StagingArea, ExtractionReport]:
    """Extract every schema table from ``<src_dir>/<table>.csv``."""
    src_dir = Path(src_dir)
    report = ExtractionReport()
    staging = StagingArea(tables={})
    for name, schema in db.tables.items():
        path = src_dir / f"{name}.csv"
        if not path.is_file():
            raise MissingInputError(f"no source file for table {name!r}: {path}")
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise MissingInputError(f"cannot read {path}: {exc}") from exc
        table, stats, quarantine = extract_table(data, schema)
        staging.tables[name] = table
        if quarantine.rows:
            staging.quarantine[name] = quarantine
        report.tables[name] = stats
        staging.log(
            LineageEvent(
                "extract",
                name,
                f"read={stats.rows_read} staged={stats.rows_staged} rejected={stats.rows_rejected}",
                stats.rows_staged,
                timestamp,
            )
        )
    report.check_conservation()
    staging.reports["extraction"] = report.to_json_dict()
    return staging, report
