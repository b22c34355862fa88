"""Structured extraction language (SEL) records.

A record is an ordered sequence of spot groups, each optionally carrying
association groups::

    ((LOC: California)(LOC: Ontario(Located_In: California)))

Grammar::

    SEL       := '(' SpotGroup* ')' | SpotGroup*
    SpotGroup := '(' Name ':' Span AssoGroup* ')'
    AssoGroup := '(' Name ':' Span ')'

The first ``:`` after a name ends the name, so spans may contain colons
while names may not. Spans run until the next ``(`` or the closing ``)``
of their group; a literal parenthesis inside a span is written ``\\(`` or
``\\)``. Whitespace around names and spans is trimmed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

__all__ = [
    "SelError",
    "UnbalancedParens",
    "MissingColon",
    "EmptyName",
    "NestingTooDeep",
    "InvalidName",
    "AssoGroup",
    "SpotGroup",
    "SelRecord",
    "Schema",
    "Violation",
    "UnknownSpot",
    "UnknownAsso",
    "parse_sel",
    "linearize_sel",
    "validate_record",
    "extract_class_set",
    "is_valid_name",
    "tokenize_sel",
    "join_sel_tokens",
]

_FORBIDDEN_NAME_CHARS = frozenset("():")


class SelError(ValueError):
    """Base class for SEL syntax errors.

    ``position`` is the byte offset (UTF-8) of the fault in the input.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at byte {position}")
        self.position = position


class UnbalancedParens(SelError):
    pass


class MissingColon(SelError):
    pass


class EmptyName(SelError):
    pass


class NestingTooDeep(SelError):
    pass


class InvalidName(ValueError):
    pass


def is_valid_name(name: str) -> bool:
    return (
        bool(name)
        and name == name.strip()
        and not any(c in _FORBIDDEN_NAME_CHARS for c in name)
        and "\\" not in name
    )


@dataclass(frozen=True)
class AssoGroup:
    asso_name: str
    info_span: str


@dataclass(frozen=True)
class SpotGroup:
    spot_name: str
    info_span: str
    assos: tuple[AssoGroup, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "assos", tuple(self.assos))


@dataclass(frozen=True)
class SelRecord:
    groups: tuple[SpotGroup, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))

    def __len__(self) -> int:
        return len(self.groups)

    def __str__(self) -> str:
        return linearize_sel(self)


@dataclass(frozen=True)
class Schema:
    spots: frozenset[str] = field(default_factory=frozenset)
    assos: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "spots", frozenset(self.spots))
        object.__setattr__(self, "assos", frozenset(self.assos))
        for name in self.spots | self.assos:
            if not is_valid_name(name):
                raise InvalidName(f"invalid class name {name!r}")

    def __bool__(self) -> bool:
        return bool(self.spots or self.assos)

    def union(self, other: "Schema") -> "Schema":
        return Schema(self.spots | other.spots, self.assos | other.assos)

    def issuperset(self, other: "Schema") -> bool:
        return self.spots >= other.spots and self.assos >= other.assos


@dataclass(frozen=True)
class Violation:
    name: str


class UnknownSpot(Violation):
    pass


class UnknownAsso(Violation):
    pass


# --------------------------------------------------------------------------
# Parsing


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        # char index -> byte offset, computed lazily on error only
        self._byte_offsets: list[int] | None = None

    def byte_offset(self, index: int) -> int:
        if self._byte_offsets is None:
            offsets = [0]
            for ch in self.text:
                offsets.append(offsets[-1] + len(ch.encode("utf-8")))
            self._byte_offsets = offsets
        return self._byte_offsets[min(index, len(self.text))]

    def fail(self, cls: type[SelError], message: str, index: int | None = None):
        raise cls(message, self.byte_offset(self.pos if index is None else index))

    def skip_ws(self) -> None:
        text, n, i = self.text, len(self.text), self.pos
        while i < n and text[i].isspace():
            i += 1
        self.pos = i

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect_open(self) -> None:
        if self.peek() != "(":
            self.fail(UnbalancedParens, "expected '('")
        self.pos += 1

    def expect_close(self, opened_at: int) -> None:
        if self.peek() != ")":
            if self.pos >= len(self.text):
                self.fail(UnbalancedParens, "unclosed '('", opened_at)
            self.fail(UnbalancedParens, "expected ')'")
        self.pos += 1

    def name(self) -> str:
        start = self.pos
        end = start
        text, n = self.text, len(self.text)
        while end < n and text[end] not in "():":
            end += 1
        if end >= n:
            self.fail(MissingColon, "expected ':' after name", end)
        if text[end] != ":":
            self.fail(MissingColon, "expected ':' after name", end)
        raw = text[start:end]
        if not raw.strip():
            self.fail(EmptyName, "empty class name", start)
        if "\\" in raw:
            self.fail(EmptyName, "backslash in class name", start + raw.index("\\"))
        self.pos = end + 1
        return raw.strip()

    def span(self) -> str:
        text, n = self.text, len(self.text)
        i = self.pos
        out: list[str] = []
        while i < n:
            ch = text[i]
            if ch == "\\" and i + 1 < n and text[i + 1] in "()\\":
                out.append(text[i + 1])
                i += 2
                continue
            if ch in "()":
                break
            out.append(ch)
            i += 1
        self.pos = i
        return "".join(out).strip()

    def asso_group(self) -> AssoGroup:
        opened_at = self.pos
        self.expect_open()
        self.skip_ws()
        name = self.name()
        span = self.span()
        if self.pos < len(self.text) and self.text[self.pos] == "(":
            self.fail(NestingTooDeep, "association groups cannot nest")
        self.expect_close(opened_at)
        return AssoGroup(name, span)

    def spot_group(self) -> SpotGroup:
        opened_at = self.pos
        self.expect_open()
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == "(":
            self.fail(NestingTooDeep, "spot group cannot start with a nested group")
        name = self.name()
        span = self.span()
        assos = []
        while self.peek() == "(":
            assos.append(self.asso_group())
        self.expect_close(opened_at)
        return SpotGroup(name, span, tuple(assos))

    def groups_until(self, terminator: str, opened_at: int | None = None) -> list[SpotGroup]:
        groups = []
        while True:
            ch = self.peek()
            if ch == "(":
                groups.append(self.spot_group())
            elif ch == terminator:
                return groups
            elif ch == "" and opened_at is not None:
                self.fail(UnbalancedParens, "unclosed '('", opened_at)
            elif ch == ")":
                self.fail(UnbalancedParens, "unexpected ')'")
            else:
                self.fail(UnbalancedParens, "expected '('")

    def record(self) -> SelRecord:
        if self.peek() == "(" and self._is_wrapped():
            opened_at = self.pos
            self.pos += 1
            groups = self.groups_until(")", opened_at)
            self.expect_close(opened_at)
            if self.peek() != "":
                self.fail(UnbalancedParens, "trailing input after record")
        else:
            groups = self.groups_until("")
        return SelRecord(tuple(groups))

    def _is_wrapped(self) -> bool:
        # wrapped iff the first '(' is followed by '(' or ')' rather than a name
        i = self.pos + 1
        text, n = self.text, len(self.text)
        while i < n and text[i].isspace():
            i += 1
        return i < n and text[i] in "()"


def parse_sel(text: str) -> SelRecord:
    """Parse a linearized SEL string.

    Both the wrapped form ``((A: x)(B: y))`` and the bare form
    ``(A: x)(B: y)`` are accepted and give the same record.

    Raises:
        UnbalancedParens, MissingColon, EmptyName, NestingTooDeep: with the
            byte offset of the fault in ``position``.
    """
    return _Parser(text).record()


# --------------------------------------------------------------------------
# Linearization

_SPAN_ESCAPE = re.compile(r"([()\\])")


def _escape_span(span: str) -> str:
    return _SPAN_ESCAPE.sub(r"\\\1", span)


def _check_name(name: str) -> str:
    if not is_valid_name(name):
        raise InvalidName(f"invalid class name {name!r}")
    return name


def linearize_sel(record: SelRecord) -> str:
    """Canonical string form: outer parentheses, one space after each colon."""
    parts = ["("]
    for group in record.groups:
        parts.append(f"({_check_name(group.spot_name)}: {_escape_span(group.info_span)}")
        for asso in group.assos:
            parts.append(f"({_check_name(asso.asso_name)}: {_escape_span(asso.info_span)})")
        parts.append(")")
    parts.append(")")
    return "".join(parts)


# --------------------------------------------------------------------------
# Schema checks


def validate_record(record: SelRecord, schema: Schema) -> list[Violation]:
    violations: list[Violation] = []
    for group in record.groups:
        if group.spot_name not in schema.spots:
            violations.append(UnknownSpot(group.spot_name))
        for asso in group.assos:
            if asso.asso_name not in schema.assos:
                violations.append(UnknownAsso(asso.asso_name))
    return violations


def extract_class_set(record: SelRecord) -> frozenset[str]:
    names = set()
    for group in record.groups:
        names.add(group.spot_name)
        names.update(a.asso_name for a in group.assos)
    return frozenset(names)


def record_schema(record: SelRecord) -> Schema:
    """Schema containing exactly the names used in ``record``."""
    spots = {g.spot_name for g in record.groups}
    assos = {a.asso_name for g in record.groups for a in g.assos}
    return Schema(frozenset(spots), frozenset(assos))


# --------------------------------------------------------------------------
# Token view used by the sequence model

_TOKEN = re.compile(r"[():]|[^\s():]+")


def tokenize_sel(text: str) -> list[str]:
    """Split a linearized SEL string into structure and word tokens.

    Escaped parentheses are not supported here; the synthetic vocabulary
    never produces them.
    """
    return _TOKEN.findall(text)


def join_sel_tokens(tokens: Iterable[str]) -> str:
    """Inverse of :func:`tokenize_sel` for canonical strings."""
    out: list[str] = []
    prev = ""
    for tok in tokens:
        if tok == ":":
            out.append(":")
        elif tok in "()":
            out.append(tok)
        else:
            if prev == ":":
                out.append(" ")
            elif prev and prev not in "()":
                out.append(" ")
            out.append(tok)
        prev = tok
    return "".join(out)
