"""The staging buffer between pipeline stages, and its on-disk form.

A StagingArea holds typed tables, per-table quarantine of rejected rows,
and an append-only lineage log. Stages never mutate a staging area they
received; they build an updated copy, which makes plan-level atomicity a
non-event.

On disk a staging dump is a directory::

    schema.manifest        current table schemas
    <table>.csv            one data file per staged table
    quarantine/<table>.csv rejected rows with a _reason column
    lineage.log            one event per line, tab-separated
    meta.json              fact/dimension declarations and stage reports

Dumps are byte-deterministic given the same staging contents.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .csvio import format_row, parse_csv
from .errors import MissingInputError, ValidationError
from .manifest import parse_schema_manifest, render_manifest
from .schema import DatabaseSchema, Table
from .values import RawCell, ValueType, parse_typed, render_cell

DEFAULT_TIMESTAMP = "1970-01-01T00:00:00Z"


@dataclass(frozen=True)
class LineageEvent:
    stage: str
    table: str
    detail: str
    rows_affected: int
    timestamp: str
    statement_index: int | None = None
    statement_text: str | None = None

    def to_line(self) -> str:
        idx = "" if self.statement_index is None else str(self.statement_index)
        stmt = (self.statement_text or "").replace("\t", " ").replace("\n", " ")
        detail = self.detail.replace("\t", " ").replace("\n", " ")
        return "\t".join([self.stage, self.table, str(self.rows_affected), self.timestamp, idx, stmt, detail])

    @classmethod
    def from_line(cls, line: str) -> "LineageEvent":
        parts = line.split("\t", 6)
        if len(parts) != 7:
            raise ValidationError(f"malformed lineage line: {line!r}")
        stage, table, rows, ts, idx, stmt, detail = parts
        try:
            return cls(stage, table, detail, int(rows), ts, int(idx) if idx else None, stmt or None)
        except ValueError as exc:
            raise ValidationError(f"malformed lineage line: {line!r}") from exc


@dataclass(frozen=True)
class QRow:
    reason: str
    fields: tuple[str, ...]


@dataclass
class Quarantine:
    columns: tuple[str, ...]
    rows: list[QRow] = field(default_factory=list)


@dataclass
class StagingArea:
    tables: dict[str, Table]
    quarantine: dict[str, Quarantine] = field(default_factory=dict)
    lineage: list[LineageEvent] = field(default_factory=list)
    fact_table: str | None = None
    dimensions: list[tuple[str, str]] = field(default_factory=list)
    reports: dict = field(default_factory=dict)

    def schema(self) -> DatabaseSchema:
        return DatabaseSchema({t.name: t.schema for t in self.tables.values()})

    def clone(self) -> "StagingArea":
        """Shallow copy safe for functional updates; Table objects are shared."""
        return replace(
            self,
            tables=dict(self.tables),
            quarantine={k: Quarantine(q.columns, list(q.rows)) for k, q in self.quarantine.items()},
            lineage=list(self.lineage),
            dimensions=list(self.dimensions),
            reports=dict(self.reports),
        )

    def add_quarantine(self, table_name: str, columns: tuple[str, ...], reason: str, fields_: tuple[str, ...]) -> None:
        q = self.quarantine.get(table_name)
        if q is None:
            q = Quarantine(columns)
            self.quarantine[table_name] = q
        q.rows.append(QRow(reason, fields_))

    def log(self, event: LineageEvent) -> None:
        self.lineage.append(event)


def render_table_csv(table: Table) -> str:
    lines = [",".join(table.schema.column_names)]
    for row in table.rows:
        rendered = []
        for cell in row:
            text = render_cell(cell)
            force = isinstance(cell, str) and text == ""
            rendered.append((text, force))
        lines.append(format_row(rendered))
    return "\n".join(lines) + "\n"


def parse_cell(text: str, quoted: bool, vtype: ValueType):
    """Extraction cell rule: bare empty is Null; a failed parse stays raw."""
    if text == "" and not quoted:
        return None
    try:
        return parse_typed(text, vtype)
    except ValueError:
        return RawCell(text)


def dumps_staging(staging: StagingArea) -> dict[str, str]:
    """All dump files as {relative path: content}, deterministically ordered."""
    files: dict[str, str] = {}
    files["schema.manifest"] = render_manifest(staging.schema())
    for name, table in staging.tables.items():
        files[f"{name}.csv"] = render_table_csv(table)
    for name, q in staging.quarantine.items():
        if not q.rows:
            continue
        lines = [",".join(("_reason",) + q.columns)]
        for qr in q.rows:
            lines.append(format_row([(qr.reason, False)] + [(f, f == "") for f in qr.fields]))
        files[f"quarantine/{name}.csv"] = "\n".join(lines) + "\n"
    files["lineage.log"] = "".join(e.to_line() + "\n" for e in staging.lineage)
    meta = {
        "fact_table": staging.fact_table,
        "dimensions": [list(d) for d in staging.dimensions],
        "reports": staging.reports,
    }
    files["meta.json"] = json.dumps(meta, sort_keys=True, indent=2) + "\n"
    return files


def dump_staging(staging: StagingArea, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rel, content in dumps_staging(staging).items():
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8", newline="\n")


def staging_fingerprint(staging: StagingArea) -> str:
    h = hashlib.sha256()
    for rel, content in sorted(dumps_staging(staging).items()):
        h.update(rel.encode())
        h.update(b"\x00")
        h.update(content.encode())
        h.update(b"\x00")
    return h.hexdigest()


def _load_table(path: Path, schema) -> Table:
    records = parse_csv(path.read_text(encoding="utf-8"))
    if not records:
        raise ValidationError(f"{path.name}: missing header row")
    header = [t for t, _ in records[0]]
    if header != list(schema.column_names):
        raise ValidationError(f"{path.name}: header does not match schema")
    rows: list[tuple] = []
    for rec in records[1:]:
        if len(rec) != len(schema.columns):
            raise ValidationError(f"{path.name}: row arity {len(rec)} != {len(schema.columns)}")
        rows.append(tuple(parse_cell(t, q, col.type) for (t, q), col in zip(rec, schema.columns)))
    return Table(schema, rows)


def load_staging(in_dir: Path) -> StagingArea:
    in_dir = Path(in_dir)
    manifest_path = in_dir / "schema.manifest"
    if not manifest_path.is_file():
        raise MissingInputError(f"not a staging directory (no schema.manifest): {in_dir}")
    db = parse_schema_manifest(manifest_path.read_text(encoding="utf-8"))
    tables: dict[str, Table] = {}
    for name, schema in db.tables.items():
        path = in_dir / f"{name}.csv"
        if not path.is_file():
            raise MissingInputError(f"staging dump is missing table file {path.name}")
        tables[name] = _load_table(path, schema)

    quarantine: dict[str, Quarantine] = {}
    qdir = in_dir / "quarantine"
    if qdir.is_dir():
        for path in sorted(qdir.glob("*.csv")):
            records = parse_csv(path.read_text(encoding="utf-8"))
            if not records:
                continue
            header = [t for t, _ in records[0]]
            if not header or header[0] != "_reason":
                raise ValidationError(f"{path}: quarantine header must start with _reason")
            q = Quarantine(tuple(header[1:]))
            for rec in records[1:]:
                q.rows.append(QRow(rec[0][0], tuple(t for t, _ in rec[1:])))
            quarantine[path.stem] = q

    lineage: list[LineageEvent] = []
    lpath = in_dir / "lineage.log"
    if lpath.is_file():
        for line in lpath.read_text(encoding="utf-8").splitlines():
            if line:
                lineage.append(LineageEvent.from_line(line))

    fact_table = None
    dimensions: list[tuple[str, str]] = []
    reports: dict = {}
    mpath = in_dir / "meta.json"
    if mpath.is_file():
        meta = json.loads(mpath.read_text(encoding="utf-8"))
        fact_table = meta.get("fact_table")
        dimensions = [tuple(d) for d in meta.get("dimensions", [])]
        reports = meta.get("reports", {})

    return StagingArea(tables, quarantine, lineage, fact_table, dimensions, reports)
