"""Tokenizer shared by the transform-plan language and the rules file.

Keywords are case-insensitive; identifiers keep their case. ``--``
comments run to end of line. String literals are single-quoted with
``''`` as the escape. Every token carries its 1-based line and column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError

KEYWORDS = frozenset(
    {
        "DROP", "TABLE", "MERGE", "INTO", "ON", "KEEP", "ADD", "COLUMN", "AS",
        "REMOVE", "CLEAN", "WITH", "FACT", "DIMENSION", "KEY",
        "AND", "OR", "NOT", "TRUE", "FALSE", "NULL",
        "INTEGER", "DECIMAL", "TEXT", "BOOLEAN", "DATE",
        "COALESCE", "IS_NULL", "PAID_ON_DUE", "DIFFICULTY",
        "GROUP", "BY", "THRESHOLDS",
    }
)

# multi-char symbols first so <= beats <
SYMBOLS = ("<=", ">=", "<>", "=", "<", ">", ";", ",", "(", ")", ".")

_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?[0-9]+(\.[0-9]+)?")


@dataclass(frozen=True)
class Token:
    kind: str  # kw | ident | number | string | symbol | eof
    lexeme: str
    line: int
    column: int

    @property
    def norm(self) -> str:
        """Keyword-normalized lexeme (uppercased for keywords)."""
        return self.lexeme.upper() if self.kind == "kw" else self.lexeme

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        return f"{self.kind} {self.lexeme!r}"


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line = 1
    line_start = 0
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "\n":
            line += 1
            pos += 1
            line_start = pos
            continue
        if ch in " \t\r":
            pos += 1
            continue
        col = pos - line_start + 1
        if text.startswith("--", pos):
            eol = text.find("\n", pos)
            pos = n if eol < 0 else eol
            continue
        if ch == "'":
            i = pos + 1
            parts: list[str] = []
            while True:
                j = text.find("'", i)
                if j < 0 or "\n" in text[i:j]:
                    raise ParseError("unterminated string literal", line, col)
                parts.append(text[i:j])
                if text.startswith("''", j):
                    parts.append("'")
                    i = j + 2
                    continue
                pos = j + 1
                break
            tokens.append(Token("string", "".join(parts), line, col))
            continue
        m = _NUMBER_RE.match(text, pos)
        if m and (ch.isdigit() or (ch == "-" and pos + 1 < n and text[pos + 1].isdigit())):
            tokens.append(Token("number", m.group(0), line, col))
            pos = m.end()
            continue
        m = _WORD_RE.match(text, pos)
        if m:
            word = m.group(0)
            kind = "kw" if word.upper() in KEYWORDS else "ident"
            tokens.append(Token(kind, word, line, col))
            pos = m.end()
            continue
        for sym in SYMBOLS:
            if text.startswith(sym, pos):
                tokens.append(Token("symbol", sym, line, col))
                pos += len(sym)
                break
        else:
            raise ParseError(f"illegal character {ch!r}", line, col)
    tokens.append(Token("eof", "", line, n - line_start + 1))
    return tokens
