"""Access to the shipped canonical schema, plan, and rules files."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


def _data_text(name: str) -> str:
    return resources.files("uwh").joinpath(f"data/{name}").read_text(encoding="utf-8")


def canonical_schema_text() -> str:
    return _data_text("university.schema")


def canonical_plan_text() -> str:
    return _data_text("university.plan")


def canonical_rules_text() -> str:
    return _data_text("university.rules")


@lru_cache(maxsize=1)
def canonical_schema():
    from .manifest import parse_schema_manifest

    return parse_schema_manifest(canonical_schema_text())


@lru_cache(maxsize=1)
def canonical_plan():
    from .plan import parse_plan

    return parse_plan(canonical_plan_text())


@lru_cache(maxsize=1)
def canonical_rules():
    from .cleanse import parse_rules

    return tuple(parse_rules(canonical_rules_text()))
