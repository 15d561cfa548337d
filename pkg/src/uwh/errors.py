"""Exception hierarchy shared by every pipeline stage.

Each subclass corresponds to one process exit code, so the CLI can map
any failure to exactly one code without inspecting messages.
"""

from __future__ import annotations


class UwhError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ValidationError(UwhError):
    """Semantic problem: bad schema, bad data, bad plan semantics, bad query."""

    exit_code = 1


class MissingInputError(UwhError):
    """A required file or directory is absent or unreadable."""

    exit_code = 2


class ParseError(UwhError):
    """Syntax error in a manifest, plan, rules file, or query expression."""

    exit_code = 3

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.raw_message = message
        self.line = line
        self.column = column
        if line is not None:
            pos = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{pos}: {message}"
        super().__init__(message)


class ManifestError(ParseError):
    """Schema manifest could not be parsed or failed semantic checks."""


class PlanParseError(ParseError):
    """Transform plan text is not grammatical."""


class PlanValidationError(ValidationError):
    """Plan parsed but does not validate against the schema."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"plan validation failed: {lines}")


class ReadOnlyError(UwhError):
    """Attempted mutation of a frozen warehouse."""

    exit_code = 4


class IntegrityError(UwhError):
    """A warehouse file does not match its recorded checksum or catalog."""

    exit_code = 5
