from __future__ import annotations

import hashlib
from datetime import date

import pytest

from oracles import difficulty_recompute, left_merge_nested_loop, paid_on_due_recompute
from uwh import canonical
from uwh.cleanse import cleanse_staging
from uwh.datagen import GenConfig, generate
from uwh.errors import ValidationError
from uwh.ingest import extract_database
from uwh.manifest import parse_schema_manifest
from uwh.plan import parse_plan
from uwh.schema import Table
from uwh.staging import StagingArea, staging_fingerprint
from uwh.transform import (
    eval_expr,
    exec_add_column,
    exec_drop,
    exec_merge,
    exec_remove_column,
    execute_plan,
)
from uwh.values import make_decimal, render_cell

TS = "T"

CANONICAL_MERGE = (
    "MERGE department, course, section INTO transcript"
    " ON transcript.tr_se_num = section.se_num"
    " AND transcript.tr_semester = section.se_semester"
    " AND transcript.tr_year = section.se_year"
    " AND section.se_code = course.co_code"
    " AND course.co_dep_id = department.dep_id"
    " KEEP course.co_code, course.co_name, course.co_credits, department.dep_name, section.se_in_id ;"
)

MERGE_CONDS = [
    (("transcript", "tr_se_num"), ("section", "se_num")),
    (("transcript", "tr_semester"), ("section", "se_semester")),
    (("transcript", "tr_year"), ("section", "se_year")),
    (("section", "se_code"), ("course", "co_code")),
    (("course", "co_dep_id"), ("department", "dep_id")),
]
MERGE_KEEP = [
    ("course", "co_code"), ("course", "co_name"), ("course", "co_credits"),
    ("department", "dep_name"), ("section", "se_in_id"),
]


# --- drop ---------------------------------------------------------------------


def test_exec_drop_assets_and_item(seed42_cleansed):
    staging = exec_drop(seed42_cleansed, "assets", timestamp=TS)
    staging = exec_drop(staging, "item", timestamp=TS)
    assert "assets" not in staging.tables and "item" not in staging.tables
    assert len(staging.tables) == 12
    # the input staging is untouched
    assert "assets" in seed42_cleansed.tables


def test_exec_drop_unknown_table():
    with pytest.raises(ValidationError) as exc:
        exec_drop(StagingArea(tables={}), "payroll")
    assert "payroll" in str(exc.value)


def test_exec_drop_empty_table_logs_zero_rows():
    db = parse_schema_manifest("TABLE t\n  id INTEGER PK\n")
    staging = StagingArea(tables={"t": Table(db.tables["t"], [])})
    out = exec_drop(staging, "t", timestamp=TS)
    assert not out.tables
    assert out.lineage[-1].rows_affected == 0


# --- merge ---------------------------------------------------------------------


def test_exec_merge_matches_nested_loop_oracle(seed42_cleansed):
    stmt = parse_plan(CANONICAL_MERGE).statements[0]
    before = len(seed42_cleansed.tables["transcript"].rows)
    out = exec_merge(seed42_cleansed, stmt, timestamp=TS)
    merged = out.tables["transcript"]
    assert len(merged.rows) == before  # left join preserves the base
    for name in ("department", "course", "section"):
        assert name not in out.tables
    expected = left_merge_nested_loop(
        seed42_cleansed.tables, "transcript", ["department", "course", "section"], MERGE_CONDS, MERGE_KEEP
    )
    assert merged.rows == expected
    assert merged.schema.column_names[-5:] == ("co_code", "co_name", "co_credits", "dep_name", "se_in_id")


def test_exec_merge_into_new_table(seed42_cleansed):
    stmt = parse_plan(
        "MERGE activities, registrationActivities INTO registeredActivities"
        " ON registrationActivities.reg_act_id = activities.act_id"
        " KEEP activities.act_name, activities.act_type, activities.ac_supervisor ;"
    ).statements[0]
    out = exec_merge(seed42_cleansed, stmt, timestamp=TS)
    assert "registeredActivities" in out.tables
    assert "activities" not in out.tables and "registrationActivities" not in out.tables
    merged = out.tables["registeredActivities"]
    assert len(merged.rows) == len(seed42_cleansed.tables["registrationActivities"].rows)
    expected = left_merge_nested_loop(
        seed42_cleansed.tables,
        "registrationActivities",
        ["activities"],
        [(("registrationActivities", "reg_act_id"), ("activities", "act_id"))],
        [("activities", "act_name"), ("activities", "act_type"), ("activities", "ac_supervisor")],
    )
    assert merged.rows == expected
    # base FK to student survives under the new name
    assert any(fk.target_table == "student" for fk in merged.schema.foreign_keys)


def test_exec_merge_empty_base_widens_schema():
    db = parse_schema_manifest(
        "TABLE base\n  id INTEGER PK\n  ref INTEGER NULL\n"
        "TABLE side\n  sid INTEGER PK\n  label TEXT\n"
        "TABLE other\n  oid INTEGER PK\n"
    )
    staging = StagingArea(
        tables={
            "base": Table(db.tables["base"], []),
            "side": Table(db.tables["side"], [(1, "x")]),
            "other": Table(db.tables["other"], [(9,)]),
        }
    )
    stmt = parse_plan("MERGE side, other INTO base ON base.ref = side.sid AND other.oid = side.sid KEEP side.label ;").statements[0]
    out = exec_merge(staging, stmt, timestamp=TS)
    assert out.tables["base"].rows == []
    assert out.tables["base"].schema.column_names == ("id", "ref", "label")


def test_exec_merge_ambiguous_join_is_an_error(seed42_cleansed):
    # joining only on the semester leg matches many sections per transcript row
    stmt = parse_plan(
        "MERGE section, course INTO transcript"
        " ON transcript.tr_semester = section.se_semester"
        " AND section.se_code = course.co_code"
        " KEEP course.co_name ;"
    ).statements[0]
    with pytest.raises(ValidationError) as exc:
        exec_merge(seed42_cleansed, stmt, timestamp=TS)
    assert "more than one row" in str(exc.value)


def test_merge_unmatched_base_rows_keep_nulls():
    db = parse_schema_manifest(
        "TABLE base\n  id INTEGER PK\n  ref INTEGER NULL\n"
        "TABLE s1\n  sid INTEGER PK\n  label TEXT\n"
        "TABLE s2\n  tid INTEGER PK\n  sid_ref INTEGER\n  tag TEXT\n"
    )
    staging = StagingArea(
        tables={
            "base": Table(db.tables["base"], [(1, 10), (2, 99), (3, None)]),
            "s1": Table(db.tables["s1"], [(10, "hit")]),
            "s2": Table(db.tables["s2"], [(7, 10, "deep")]),
        }
    )
    stmt = parse_plan(
        "MERGE s1, s2 INTO base ON base.ref = s1.sid AND s2.sid_ref = s1.sid KEEP s1.label, s2.tag ;"
    ).statements[0]
    out = exec_merge(staging, stmt, timestamp=TS)
    assert out.tables["base"].rows == [(1, 10, "hit", "deep"), (2, 99, None, None), (3, None, None, None)]


# --- eval_expr -----------------------------------------------------------------


def _receipt_table():
    db = parse_schema_manifest("TABLE r\n  id INTEGER PK\n  paid DATE NULL\n  due DATE NULL\n")
    return Table(db.tables["r"], [])


@pytest.mark.parametrize(
    "payment,due,expected",
    [
        (date(2011, 9, 1), date(2011, 9, 15), True),
        (None, date(2011, 9, 15), False),
        (date(2011, 9, 15), date(2011, 9, 15), True),  # boundary: on the day
        (date(2011, 9, 16), date(2011, 9, 15), False),
        (date(2011, 9, 1), None, False),
    ],
)
def test_paid_on_due(payment, due, expected):
    table = _receipt_table()
    expr = parse_plan("ADD COLUMN r.x BOOLEAN AS PAID_ON_DUE(r.paid, r.due) ;").statements[0].derivation
    assert eval_expr(expr, table, (1, payment, due)) is expected
    assert paid_on_due_recompute(payment, due) is expected


def _grades_table(rows):
    db = parse_schema_manifest("TABLE g\n  id INTEGER PK\n  code TEXT\n  grade DECIMAL NULL\n")
    return Table(db.tables["g"], rows)


def test_difficulty_buckets():
    rows = [
        (1, "A", make_decimal("90")), (2, "A", make_decimal("85")),   # mean 87.5 -> low
        (3, "B", make_decimal("60")), (4, "B", make_decimal("65")),   # mean 62.5 -> high
        (5, "C", make_decimal("70")), (6, "C", make_decimal("75")),   # mean 72.5 -> medium
        (7, "D", None),                                               # all-Null group -> unknown
    ]
    table = _grades_table(rows)
    expr = parse_plan(
        "ADD COLUMN g.d TEXT AS DIFFICULTY(g.grade GROUP BY g.code THRESHOLDS 80, 65) ;"
    ).statements[0].derivation
    got = {row[1]: eval_expr(expr, table, row) for row in rows}
    assert got == {"A": "low", "B": "high", "C": "medium", "D": "unknown"}
    oracle = difficulty_recompute([(r[1], r[2]) for r in rows], 80, 65)
    assert {k: v for k, v in got.items()} == oracle


def test_difficulty_threshold_boundaries():
    rows = [(1, "A", make_decimal("80")), (2, "B", make_decimal("65")), (3, "C", make_decimal("64.9999"))]
    table = _grades_table(rows)
    expr = parse_plan(
        "ADD COLUMN g.d TEXT AS DIFFICULTY(g.grade GROUP BY g.code THRESHOLDS 80, 65) ;"
    ).statements[0].derivation
    assert eval_expr(expr, table, rows[0]) == "low"  # mean >= hi
    assert eval_expr(expr, table, rows[1]) == "medium"  # lo <= mean < hi
    assert eval_expr(expr, table, rows[2]) == "high"


def test_coalesce_and_null_comparisons():
    db = parse_schema_manifest("TABLE t\n  id INTEGER PK\n  a TEXT NULL\n  b TEXT NULL\n")
    table = Table(db.tables["t"], [])
    coalesce = parse_plan("ADD COLUMN t.x TEXT AS COALESCE(t.a, t.b) ;").statements[0].derivation
    assert eval_expr(coalesce, table, (1, None, "x")) == "x"
    assert eval_expr(coalesce, table, (1, "y", "x")) == "y"
    assert eval_expr(coalesce, table, (1, None, None)) is None
    # comparisons with a Null operand are false, including <>
    cmp_ = parse_plan("ADD COLUMN t.x BOOLEAN AS t.a <> t.b ;").statements[0].derivation
    assert eval_expr(cmp_, table, (1, None, "x")) is False
    eq = parse_plan("ADD COLUMN t.x BOOLEAN AS t.a = t.b ;").statements[0].derivation
    assert eval_expr(eq, table, (1, None, None)) is False
    isnull = parse_plan("ADD COLUMN t.x BOOLEAN AS IS_NULL(t.a) ;").statements[0].derivation
    assert eval_expr(isnull, table, (1, None, "x")) is True


# --- add/remove column -----------------------------------------------------------


def test_add_paid_on_due_column_matches_recompute(seed42_cleansed):
    stmt = parse_plan(
        "ADD COLUMN receipt.re_paidOnDueDate BOOLEAN AS PAID_ON_DUE(receipt.re_dateOfPayment, receipt.re_dueDate) ;"
    ).statements[0]
    out = exec_add_column(seed42_cleansed, stmt, timestamp=TS)
    table = out.tables["receipt"]
    schema = table.schema
    p = schema.column_index("re_dateOfPayment")
    d = schema.column_index("re_dueDate")
    flag = schema.column_index("re_paidOnDueDate")
    assert table.rows, "cleansed receipts should not be empty"
    for row in table.rows:
        assert row[flag] is paid_on_due_recompute(row[p], row[d])


def test_add_difficulty_column_matches_recompute(seed42_cleansed):
    merged = exec_merge(seed42_cleansed, parse_plan(CANONICAL_MERGE).statements[0], timestamp=TS)
    stmt = parse_plan(
        "ADD COLUMN transcript.tr_courseDifficulty TEXT"
        " AS DIFFICULTY(transcript.tr_grade GROUP BY transcript.co_code THRESHOLDS 80, 65) ;"
    ).statements[0]
    out = exec_add_column(merged, stmt, timestamp=TS)
    table = out.tables["transcript"]
    g = table.schema.column_index("tr_grade")
    k = table.schema.column_index("co_code")
    d = table.schema.column_index("tr_courseDifficulty")
    labels = difficulty_recompute([(row[k], row[g]) for row in table.rows], 80, 65)
    assert table.rows
    for row in table.rows:
        assert row[d] == labels[row[k]]


def test_difficulty_is_order_independent(seed42_cleansed):
    import random

    merged = exec_merge(seed42_cleansed, parse_plan(CANONICAL_MERGE).statements[0], timestamp=TS)
    stmt = parse_plan(
        "ADD COLUMN transcript.tr_courseDifficulty TEXT"
        " AS DIFFICULTY(transcript.tr_grade GROUP BY transcript.co_code THRESHOLDS 80, 65) ;"
    ).statements[0]
    shuffled = merged.clone()
    rows = list(shuffled.tables["transcript"].rows)
    random.Random(5).shuffle(rows)
    shuffled.tables["transcript"] = Table(shuffled.tables["transcript"].schema, rows)
    a = exec_add_column(merged, stmt, timestamp=TS).tables["transcript"]
    b = exec_add_column(shuffled, stmt, timestamp=TS).tables["transcript"]
    key = lambda r: tuple(render_cell(c) for c in r)
    assert sorted(map(key, a.rows)) == sorted(map(key, b.rows))


def test_add_column_to_empty_table():
    db = parse_schema_manifest("TABLE t\n  id INTEGER PK\n")
    staging = StagingArea(tables={"t": Table(db.tables["t"], [])})
    out = exec_add_column(staging, parse_plan("ADD COLUMN t.x INTEGER AS 5 ;").statements[0], timestamp=TS)
    assert out.tables["t"].schema.column_names == ("id", "x")
    assert out.tables["t"].rows == []


def test_add_column_name_collision():
    db = parse_schema_manifest("TABLE t\n  id INTEGER PK\n")
    staging = StagingArea(tables={"t": Table(db.tables["t"], [])})
    with pytest.raises(ValidationError):
        exec_add_column(staging, parse_plan("ADD COLUMN t.id INTEGER AS 5 ;").statements[0])


def test_remove_columns_canonical_sequence(seed42_cleansed):
    staging = exec_add_column(
        seed42_cleansed,
        parse_plan(
            "ADD COLUMN receipt.re_paidOnDueDate BOOLEAN AS PAID_ON_DUE(receipt.re_dateOfPayment, receipt.re_dueDate) ;"
        ).statements[0],
        timestamp=TS,
    )
    staging = exec_remove_column(staging, parse_plan("REMOVE COLUMN receipt.re_dueDate ;").statements[0], timestamp=TS)
    staging = exec_remove_column(
        staging, parse_plan("REMOVE COLUMN receipt.re_dateOfPayment ;").statements[0], timestamp=TS
    )
    cols = staging.tables["receipt"].schema.column_names
    assert "re_dueDate" not in cols and "re_dateOfPayment" not in cols
    assert "re_paidOnDueDate" in cols


def test_remove_unknown_column():
    db = parse_schema_manifest("TABLE t\n  id INTEGER PK\n")
    staging = StagingArea(tables={"t": Table(db.tables["t"], [])})
    with pytest.raises(ValidationError) as exc:
        exec_remove_column(staging, parse_plan("REMOVE COLUMN t.ghost ;").statements[0])
    assert "t.ghost" in str(exc.value)


def _column_hash(table, name):
    i = table.schema.column_index(name)
    h = hashlib.sha256()
    for row in table.rows:
        h.update(render_cell(row[i]).encode())
        h.update(b"\x00")
    return h.hexdigest()


def test_remove_column_leaves_others_untouched(seed42_cleansed):
    before = seed42_cleansed.tables["student"]
    hashes = {c: _column_hash(before, c) for c in before.schema.column_names if c != "st_phone"}
    out = exec_remove_column(seed42_cleansed, parse_plan("REMOVE COLUMN student.st_phone ;").statements[0], timestamp=TS)
    after = out.tables["student"]
    assert len(after.schema.columns) == len(before.schema.columns) - 1
    for c, h in hashes.items():
        assert _column_hash(after, c) == h, c


def test_add_column_leaves_others_untouched(seed42_cleansed):
    before = seed42_cleansed.tables["receipt"]
    hashes = {c: _column_hash(before, c) for c in before.schema.column_names}
    stmt = parse_plan(
        "ADD COLUMN receipt.re_paidOnDueDate BOOLEAN AS PAID_ON_DUE(receipt.re_dateOfPayment, receipt.re_dueDate) ;"
    ).statements[0]
    after = exec_add_column(seed42_cleansed, stmt, timestamp=TS).tables["receipt"]
    assert len(after.schema.columns) == len(before.schema.columns) + 1
    for c, h in hashes.items():
        assert _column_hash(after, c) == h, c


# --- execute_plan ---------------------------------------------------------------


def test_execute_canonical_plan_shape(seed42_transformed):
    assert len(seed42_transformed.tables) == 8
    assert seed42_transformed.fact_table == "transcript"
    assert [d for d, _ in seed42_transformed.dimensions] == [
        "student", "major", "instructor", "account", "receipt", "registeredActivities", "alumni",
    ]
    lineage_stmts = [e for e in seed42_transformed.lineage if e.stage == "statement"]
    assert len(lineage_stmts) == 19
    assert [e.statement_index for e in lineage_stmts] == list(range(19))
    assert all(e.statement_text for e in lineage_stmts)


def test_execute_plan_is_deterministic(seed42_cleansed):
    a, _ = execute_plan(seed42_cleansed, canonical.canonical_plan(), timestamp=TS)
    b, _ = execute_plan(seed42_cleansed, canonical.canonical_plan(), timestamp=TS)
    assert staging_fingerprint(a) == staging_fingerprint(b)


def test_execute_plan_failure_preserves_prestate(seed42_cleansed):
    before = staging_fingerprint(seed42_cleansed)
    # statement 3 fails at runtime: joining sections by semester only is ambiguous
    text = (
        "DROP TABLE assets ;\n"
        "DROP TABLE item ;\n"
        "MERGE section, course INTO transcript"
        " ON transcript.tr_semester = section.se_semester"
        " AND section.se_code = course.co_code"
        " KEEP course.co_name ;\n"
    )
    with pytest.raises(ValidationError):
        execute_plan(seed42_cleansed, parse_plan(text), timestamp=TS)
    assert staging_fingerprint(seed42_cleansed) == before
    assert "assets" in seed42_cleansed.tables


def test_execute_plan_validates_first(seed42_cleansed):
    from uwh.errors import PlanValidationError

    before = staging_fingerprint(seed42_cleansed)
    with pytest.raises(PlanValidationError):
        execute_plan(seed42_cleansed, parse_plan("DROP TABLE nowhere ;"), timestamp=TS)
    assert staging_fingerprint(seed42_cleansed) == before


def test_merge_preserves_cardinality_across_seeds():
    for seed in (3, 11):
        import tempfile
        from pathlib import Path

        src = Path(tempfile.mkdtemp())
        generate(GenConfig(seed=seed, students=30, semesters=2, dirty_rate=0.04), src)
        staging, _ = extract_database(src, canonical.canonical_schema(), timestamp=TS)
        cleansed, _ = cleanse_staging(staging, list(canonical.canonical_rules()), timestamp=TS)
        stmt = parse_plan(CANONICAL_MERGE).statements[0]
        before = len(cleansed.tables["transcript"].rows)
        out = exec_merge(cleansed, stmt, timestamp=TS)
        assert len(out.tables["transcript"].rows) == before
