"""The ``uwh`` command line: every pipeline stage plus end-to-end build,
query, and reporting.

Exit codes: 0 success, 1 validation or semantic error, 2 I/O error,
3 plan/manifest parse error, 4 read-only violation, 5 integrity failure.
Messages go to stderr; data (query results, reports) goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import canonical
from .cleanse import cleanse_staging, parse_rules
from .datagen import GenConfig, generate
from .errors import MissingInputError, ReadOnlyError, UwhError, ValidationError
from .ingest import extract_database
from .manifest import parse_schema_manifest
from .plan import parse_plan, pretty_plan, validate_plan
from .staging import dump_staging, load_staging, render_table_csv, staging_fingerprint
from .transform import execute_plan
from .warehouse import (
    StarQuery,
    assemble_snowflake,
    is_warehouse_dir,
    load,
    open_warehouse,
    parse_filter,
    parse_measure,
    sha256_hex,
    star_query,
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on stderr and exits 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _now_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _guard_writable(path: Path, what: str = "target") -> None:
    if is_warehouse_dir(path):
        raise ReadOnlyError(
            f"{what} {path} holds a frozen warehouse (catalog.json); warehouses are read-only"
        )


def _read_text(path: Path, what: str) -> str:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no {what} at {path}")
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MissingInputError(f"cannot read {what} {path}: {exc}") from exc


def _load_schema(args) -> object:
    if args.schema is None:
        return canonical.canonical_schema()
    return parse_schema_manifest(_read_text(args.schema, "schema manifest"))


def _load_plan(args):
    if args.plan is None:
        return canonical.canonical_plan()
    return parse_plan(_read_text(args.plan, "transform plan"))


def _load_rules(args):
    if args.rules is None:
        return list(canonical.canonical_rules())
    return parse_rules(_read_text(args.rules, "rules file"))


def _staging_arg(path: Path):
    path = Path(path)
    _guard_writable(path, "staging directory")
    return load_staging(path)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    out = Path(args.out)
    _guard_writable(out)
    config = GenConfig(
        seed=args.seed,
        students=args.students,
        courses_per_dept=args.courses_per_dept,
        semesters=args.semesters,
        dirty_rate=args.dirty_rate,
    )
    ledger = generate(config, out)
    print(f"generated 14 tables under {out} ({len(ledger.entries)} dirt entries)", file=sys.stderr)
    return 0


def _cmd_extract(args) -> int:
    schema = _load_schema(args)
    out = Path(args.out)
    _guard_writable(out)
    staging, report = extract_database(Path(args.src), schema, timestamp=args.timestamp)
    dump_staging(staging, out)
    total = sum(t.rows_staged for t in report.tables.values())
    rejected = sum(t.rows_rejected for t in report.tables.values())
    print(f"extracted {len(staging.tables)} tables, {total} rows staged, {rejected} rejected", file=sys.stderr)
    return 0


def _cmd_cleanse(args) -> int:
    staging = _staging_arg(args.staging)
    rules = _load_rules(args)
    out = Path(args.out) if args.out else Path(args.staging)
    _guard_writable(out)
    cleaned, report = cleanse_staging(staging, rules, timestamp=args.timestamp)
    dump_staging(cleaned, out)
    print(report.to_text(), end="", file=sys.stderr)
    return 0


def _cmd_transform(args) -> int:
    staging = _staging_arg(args.staging)
    plan = _load_plan(args)
    validate_plan(plan, staging.schema())
    out = Path(args.out) if args.out else Path(args.staging)
    _guard_writable(out)
    transformed, lineage = execute_plan(staging, plan, timestamp=args.timestamp)
    dump_staging(transformed, out)
    print(f"executed {len(lineage)} statements; staging now holds {len(transformed.tables)} tables", file=sys.stderr)
    return 0


def _cmd_load(args) -> int:
    staging = _staging_arg(args.staging)
    out = Path(args.out)
    if staging.fact_table is None or not staging.dimensions:
        raise ValidationError("staging carries no fact/dimension declarations; run transform first")
    snowflake = assemble_snowflake(staging.tables, staging.fact_table, staging.dimensions)
    catalog = load(
        out,
        snowflake,
        staging,
        timestamp=args.timestamp,
        source_hash=staging_fingerprint(staging),
    )
    print(f"loaded {len(catalog['relations'])} relations into {out}", file=sys.stderr)
    return 0


def _cmd_build(args) -> int:
    schema = _load_schema(args)
    plan = _load_plan(args)
    rules = _load_rules(args)
    out = Path(args.out)
    _guard_writable(out)
    if out.exists() and any(out.iterdir()):
        raise ValidationError(f"refusing to build into non-empty directory {out}")

    staging, _ = extract_database(Path(args.src), schema, timestamp=args.timestamp)
    validate_plan(plan, staging.schema())
    cleaned, report = cleanse_staging(staging, rules, timestamp=args.timestamp)
    transformed, _ = execute_plan(cleaned, plan, timestamp=args.timestamp)
    if transformed.fact_table is None:
        raise ValidationError("plan declares no FACT table")
    snowflake = assemble_snowflake(transformed.tables, transformed.fact_table, transformed.dimensions)

    plan_hash = sha256_hex(pretty_plan(plan).encode("utf-8"))
    source_hash = staging_fingerprint(transformed)
    # build into a scratch sibling, then move: a failed build leaves nothing
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}-partial-", dir=out.parent))
    try:
        target = scratch / "wh"
        load(target, snowflake, transformed, timestamp=args.timestamp, plan_hash=plan_hash, source_hash=source_hash)
        if args.keep_staging:
            staging_dir = Path(args.keep_staging)
            _guard_writable(staging_dir)
            dump_staging(transformed, staging_dir)
        if out.exists():
            out.rmdir()
        target.replace(out)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    quarantined = sum(len(q.rows) for q in transformed.quarantine.values())
    print(
        f"warehouse ready at {out}: {len(snowflake.relation_names())} relations, "
        f"{len(transformed.tables[snowflake.fact].rows)} fact rows, {quarantined} rows quarantined",
        file=sys.stderr,
    )
    return 0


def _cmd_query(args) -> int:
    handle = open_warehouse(Path(args.warehouse))
    for notice in handle.notices:
        print(f"notice: {notice}", file=sys.stderr)
    measures = tuple(parse_measure(m) for m in args.measure)
    group_by = tuple(g.strip() for arg in (args.group_by or []) for g in arg.split(",") if g.strip())
    filters = tuple(parse_filter(f) for f in (args.filter or []))
    result = star_query(handle, StarQuery(measures, group_by, filters))
    sys.stdout.write(render_table_csv(result))
    return 0


def _cmd_report(args) -> int:
    if (args.staging is None) == (args.warehouse is None):
        raise ValidationError("report needs exactly one of --staging or --warehouse")
    if args.staging:
        staging = _staging_arg(args.staging)
        payload = {
            "tables": {name: len(t.rows) for name, t in staging.tables.items()},
            "quarantine": {name: len(q.rows) for name, q in staging.quarantine.items() if q.rows},
            "lineage_events": len(staging.lineage),
            "fact_table": staging.fact_table,
            "dimensions": [list(d) for d in staging.dimensions],
            "reports": staging.reports,
        }
        if args.json:
            print(json.dumps(payload, sort_keys=True, indent=2))
        else:
            print("staging report")
            print("==============")
            for name, n in payload["tables"].items():
                print(f"{name}: {n} rows")
            for name, n in payload["quarantine"].items():
                print(f"quarantine/{name}: {n} rows")
            print(f"lineage events: {payload['lineage_events']}")
            if staging.fact_table:
                print(f"fact: {staging.fact_table}; dimensions: {', '.join(d for d, _ in staging.dimensions)}")
        return 0
    handle = open_warehouse(Path(args.warehouse))
    catalog = handle.catalog
    payload = {
        "relations": {r["name"]: r["row_count"] for r in catalog["relations"]},
        "fact": catalog["fact"],
        "dimensions": catalog["dimensions"],
        "indexes": [f"{i['relation']}({','.join(i['columns'])}) {i['kind']}" for i in catalog["indexes"]],
        "build": catalog["build"],
        "notices": handle.notices,
    }
    if args.json:
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print("warehouse report")
        print("================")
        for name, n in payload["relations"].items():
            kind = "fact" if name == catalog["fact"] else "dimension"
            print(f"{name}: {n} rows ({kind})")
        for line in payload["indexes"]:
            print(f"index {line}")
        print(f"built {catalog['build']['timestamp']} plan={catalog['build']['plan_hash'][:12]}")
    return 0


# ---------------------------------------------------------------------------


def _add_timestamp(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timestamp", default=None, help="pin the build timestamp (ISO-8601) for reproducible output")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uwh", description="University warehouse ETL engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic operational CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--students", type=int, default=100)
    p.add_argument("--courses-per-dept", type=int, default=5)
    p.add_argument("--semesters", type=int, default=3)
    p.add_argument("--dirty-rate", type=float, default=0.0)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("extract", help="extract source CSVs into a staging dump")
    p.add_argument("--schema", default=None, help="schema manifest (default: canonical 14-table schema)")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    _add_timestamp(p)
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("cleanse", help="apply cleansing rules, dedup, and FK reconciliation")
    p.add_argument("--staging", required=True)
    p.add_argument("--rules", default=None, help="rules file (default: canonical rules)")
    p.add_argument("--out", default=None, help="output staging dir (default: rewrite --staging)")
    _add_timestamp(p)
    p.set_defaults(fn=_cmd_cleanse)

    p = sub.add_parser("transform", help="execute a transform plan against staging")
    p.add_argument("--staging", required=True)
    p.add_argument("--plan", default=None, help="plan file (default: canonical plan)")
    p.add_argument("--out", default=None, help="output staging dir (default: rewrite --staging)")
    _add_timestamp(p)
    p.set_defaults(fn=_cmd_transform)

    p = sub.add_parser("load", help="assemble the snowflake and load an indexed warehouse")
    p.add_argument("--staging", required=True)
    p.add_argument("--out", required=True)
    _add_timestamp(p)
    p.set_defaults(fn=_cmd_load)

    p = sub.add_parser("build", help="extract, cleanse, transform, and load in one atomic run")
    p.add_argument("--schema", default=None)
    p.add_argument("--src", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--rules", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-staging", default=None, help="also dump the final staging here")
    _add_timestamp(p)
    p.set_defaults(fn=_cmd_build)

    p = sub.add_parser("query", help="run a star-join aggregate query")
    p.add_argument("--warehouse", required=True)
    p.add_argument("--measure", action="append", required=True, help="AGG(column) or COUNT(*); repeatable")
    p.add_argument("--group-by", action="append", default=None, help="dimension/fact attributes; repeatable or comma-separated")
    p.add_argument("--filter", action="append", default=None, help="'attribute OP literal'; repeatable")
    p.set_defaults(fn=_cmd_query)

    p = sub.add_parser("report", help="summarize a staging dump or a warehouse")
    p.add_argument("--staging", default=None)
    p.add_argument("--warehouse", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_report)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "timestamp", None) is None and hasattr(args, "timestamp"):
            args.timestamp = _now_timestamp()
        return args.fn(args)
    except UwhError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
