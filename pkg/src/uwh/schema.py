"""Typed relational schema and row model shared by every stage.

Schemas, rows, and tables are immutable values; validation functions are
pure and return diagnostics instead of raising, so callers decide what is
fatal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .values import RawCell, ValueType, is_identifier, value_tag


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type: ValueType
    nullable: bool = False


@dataclass(frozen=True)
class ForeignKey:
    columns: tuple[str, ...]
    target_table: str
    target_columns: tuple[str, ...]

    def label(self, table: str) -> str:
        return f"{table}.{','.join(self.columns)}->{self.target_table}({','.join(self.target_columns)})"


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: tuple[str, ...]
    foreign_keys: tuple[ForeignKey, ...] = ()

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(f"{self.name} has no column {name!r}")

    def column(self, name: str) -> ColumnDef:
        return self.columns[self.column_index(name)]

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def pk_indexes(self) -> tuple[int, ...]:
        return tuple(self.column_index(n) for n in self.primary_key)


@dataclass(frozen=True)
class DatabaseSchema:
    tables: dict[str, TableSchema]

    def __iter__(self):
        return iter(self.tables.values())


@dataclass
class Table:
    """A schema plus its row sequence. Rows are tuples of cell values."""

    schema: TableSchema
    rows: list[tuple]

    @property
    def name(self) -> str:
        return self.schema.name

    def pk_of(self, row: tuple) -> tuple:
        return tuple(row[i] for i in self.schema.pk_indexes())


@dataclass(frozen=True)
class Diagnostic:
    table: str
    column: str | None
    message: str

    def __str__(self) -> str:
        where = self.table if self.column is None else f"{self.table}.{self.column}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class RowIssue:
    column: str | None
    reason: str  # arity | type | null-in-nonnullable

    def __str__(self) -> str:
        return self.reason if self.column is None else f"{self.reason}:{self.column}"


def validate_schema(db: DatabaseSchema) -> list[Diagnostic]:
    """All structural invariants of a database schema; empty list means ok."""
    diags: list[Diagnostic] = []
    for table in db:
        if not is_identifier(table.name):
            diags.append(Diagnostic(table.name, None, "table name is not an identifier"))
        seen: set[str] = set()
        for col in table.columns:
            if not is_identifier(col.name):
                diags.append(Diagnostic(table.name, col.name, "column name is not an identifier"))
            if col.name in seen:
                diags.append(Diagnostic(table.name, col.name, "duplicate column name"))
            seen.add(col.name)
        if not table.primary_key:
            diags.append(Diagnostic(table.name, None, "missing primary key"))
        for pk in table.primary_key:
            if pk not in seen:
                diags.append(Diagnostic(table.name, pk, "primary key names unknown column"))
            elif table.column(pk).nullable:
                diags.append(Diagnostic(table.name, pk, "primary key column must be non-nullable"))
        for fk in table.foreign_keys:
            if len(fk.columns) != len(fk.target_columns):
                diags.append(Diagnostic(table.name, None, f"foreign key arity mismatch in {fk.label(table.name)}"))
                continue
            target = db.tables.get(fk.target_table)
            if target is None:
                diags.append(
                    Diagnostic(table.name, fk.columns[0], f"foreign key targets missing table {fk.target_table!r}")
                )
                continue
            for local, remote in zip(fk.columns, fk.target_columns):
                if not table.has_column(local):
                    diags.append(Diagnostic(table.name, local, "foreign key names unknown local column"))
                    continue
                if not target.has_column(remote):
                    diags.append(
                        Diagnostic(table.name, local, f"foreign key targets unknown column {fk.target_table}.{remote}")
                    )
                    continue
                if table.column(local).type is not target.column(remote).type:
                    diags.append(
                        Diagnostic(
                            table.name,
                            local,
                            f"foreign key type mismatch against {fk.target_table}.{remote}",
                        )
                    )
    return diags


def check_row(schema: TableSchema, row: tuple, *, allow_raw: bool = False) -> RowIssue | None:
    """None when the row conforms; otherwise the first violation found.

    ``allow_raw`` admits RawCell text in non-TEXT columns, which is the
    state of staged tables between extraction and cleansing.
    """
    if len(row) != len(schema.columns):
        return RowIssue(None, "arity")
    for col, cell in zip(schema.columns, row):
        if cell is None:
            if not col.nullable:
                return RowIssue(col.name, "null-in-nonnullable")
            continue
        if isinstance(cell, RawCell):
            if allow_raw:
                continue
            return RowIssue(col.name, "type")
        if value_tag(cell) is not col.type:
            return RowIssue(col.name, "type")
    return None


def validate_table(table: Table, *, allow_raw: bool = False, check_pk: bool = True) -> list[Diagnostic]:
    """Row conformance plus primary-key uniqueness for a whole table."""
    diags: list[Diagnostic] = []
    for i, row in enumerate(table.rows):
        issue = check_row(table.schema, row, allow_raw=allow_raw)
        if issue is not None:
            diags.append(Diagnostic(table.name, issue.column, f"row {i}: {issue.reason}"))
    if check_pk:
        seen: dict[tuple, int] = {}
        for i, row in enumerate(table.rows):
            if len(row) != len(table.schema.columns):
                continue
            key = table.pk_of(row)
            if key in seen:
                diags.append(Diagnostic(table.name, None, f"rows {seen[key]} and {i} share primary key {key!r}"))
            else:
                seen[key] = i
    return diags


@dataclass(frozen=True)
class OrphanEntry:
    table: str
    fk: str
    row_index: int
    key: tuple


@dataclass
class OrphanReport:
    entries: list[OrphanEntry] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.entries

    def by_fk(self) -> dict[str, list[OrphanEntry]]:
        grouped: dict[str, list[OrphanEntry]] = {}
        for e in self.entries:
            grouped.setdefault(e.fk, []).append(e)
        return grouped


def _tables_of(staging) -> Mapping[str, Table]:
    return staging.tables if hasattr(staging, "tables") else staging


def check_referential_integrity(staging) -> OrphanReport:
    """Every FK tuple with all components non-Null must match a target row.

    Accepts a StagingArea or any mapping of table name to Table.
    """
    tables = _tables_of(staging)
    report = OrphanReport()
    for table in tables.values():
        for fk in table.schema.foreign_keys:
            target = tables.get(fk.target_table)
            if target is None:
                continue  # dangling FK declarations are a schema problem, not a data one
            local_idx = tuple(table.schema.column_index(c) for c in fk.columns)
            remote_idx = tuple(target.schema.column_index(c) for c in fk.target_columns)
            present = {tuple(row[i] for i in remote_idx) for row in target.rows}
            label = fk.label(table.name)
            for n, row in enumerate(table.rows):
                key = tuple(row[i] for i in local_idx)
                if any(v is None for v in key):
                    continue
                if key not in present:
                    report.entries.append(OrphanEntry(table.name, label, n, key))
    return report


def schema_of_tables(tables: Iterable[Table]) -> DatabaseSchema:
    return DatabaseSchema({t.name: t.schema for t in tables})
