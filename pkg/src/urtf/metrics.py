"""Span-offset micro-F1 for SEL predictions.

Records are grounded on their source text by locating each info span,
turned into per-task tuples, and matched as multisets. Scores are micro
averaged: counts are summed over the dataset before P/R/F1.

Task encodings over SEL:

* ``NER``: one ``(type, span)`` per spot group.
* ``RTE``: one ``(head, relation, tail)`` per association group. The tail is
  the first spot group whose span text equals the association span.
* ``EVT_TRG``: one ``(event type, trigger span)`` per spot group.
* ``EVT_ARG``: one ``(event type, role, argument span)`` per association.
* ``SENTI``: the spot span is the aspect target, each association is an
  opinion span whose name is the polarity.

Label-only components (relation, role, event type on arguments, polarity)
carry the offsets of the span they qualify, so every element is a
``(label, start, end)`` triple.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .sel import SelRecord

UNMATCHED = (-1, -1)
UNTYPED = "<untyped>"


class TaskKind(str, enum.Enum):
    NER = "ner"
    RTE = "rte"
    EVT_TRG = "evt-trg"
    EVT_ARG = "evt-arg"
    SENTI = "senti"


ARITY = {
    TaskKind.NER: 1,
    TaskKind.RTE: 3,
    TaskKind.EVT_TRG: 1,
    TaskKind.EVT_ARG: 2,
    TaskKind.SENTI: 3,
}


class UnresolvableTail(LookupError):
    pass


@dataclass(frozen=True)
class GroundedTuple:
    task_kind: TaskKind
    elements: tuple[tuple[str, int, int], ...]

    @property
    def grounded(self) -> bool:
        return all(start >= 0 for _, start, _ in self.elements)


@dataclass(frozen=True)
class PrfScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "PrfScore") -> "PrfScore":
        return PrfScore(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass(frozen=True)
class GroundedSpan:
    group: int
    asso: int | None  # None for the spot span itself
    text: str
    start: int
    end: int

    @property
    def matched(self) -> bool:
        return self.start >= 0


def _find(text: str, span: str, cursor: int) -> tuple[int, int]:
    if not span:
        return UNMATCHED
    at = text.find(span, cursor)
    if at < 0:
        at = text.find(span)
    if at < 0:
        return UNMATCHED
    return at, at + len(span)


def reconstruct_offsets(record: SelRecord, text: str) -> list[GroundedSpan]:
    """Locate every info span of ``record`` in ``text``.

    Spot spans are matched left to right: each takes the earliest occurrence
    starting after the start of the previous spot match, so a repeated span
    lands on its next occurrence. When nothing follows the cursor the
    earliest occurrence anywhere is used. Association spans are searched
    from their own spot's start and do not move the cursor. Spans absent
    from the text get offsets ``(-1, -1)``.
    """
    out: list[GroundedSpan] = []
    cursor = 0
    for gi, group in enumerate(record.groups):
        start, end = _find(text, group.info_span, cursor)
        anchor = start if start >= 0 else cursor
        if start >= 0:
            cursor = start + 1
        out.append(GroundedSpan(gi, None, group.info_span, start, end))
        for ai, asso in enumerate(group.assos):
            a_start, a_end = _find(text, asso.info_span, anchor)
            out.append(GroundedSpan(gi, ai, asso.info_span, a_start, a_end))
    return out


def to_tuples(
    record: SelRecord, text: str, task_kind: TaskKind | str, strict: bool = False
) -> Counter:
    """Multiset of grounded tuples for one record.

    An RTE association whose span matches no spot group yields a tail typed
    ``<untyped>``; with ``strict=True`` it raises :class:`UnresolvableTail`.
    """
    kind = TaskKind(task_kind)
    spans = reconstruct_offsets(record, text)
    spot_at = {s.group: s for s in spans if s.asso is None}
    asso_at = {(s.group, s.asso): s for s in spans if s.asso is not None}
    out: Counter = Counter()

    def emit(*elements: tuple[str, int, int]) -> None:
        out[GroundedTuple(kind, tuple(elements))] += 1

    for gi, group in enumerate(record.groups):
        head = spot_at[gi]
        if kind in (TaskKind.NER, TaskKind.EVT_TRG):
            emit((group.spot_name, head.start, head.end))
            continue
        for ai, asso in enumerate(group.assos):
            arg = asso_at[(gi, ai)]
            if kind is TaskKind.RTE:
                tail_type, t_start, t_end = _resolve_tail(record, spot_at, asso.info_span)
                if tail_type == UNTYPED:
                    if strict:
                        raise UnresolvableTail(asso.info_span)
                    t_start, t_end = arg.start, arg.end
                emit(
                    (group.spot_name, head.start, head.end),
                    (asso.asso_name, t_start, t_end),
                    (tail_type, t_start, t_end),
                )
            elif kind is TaskKind.EVT_ARG:
                emit(
                    (group.spot_name, arg.start, arg.end),
                    (asso.asso_name, arg.start, arg.end),
                )
            else:  # SENTI
                emit(
                    ("target", head.start, head.end),
                    ("opinion", arg.start, arg.end),
                    (asso.asso_name, arg.start, arg.end),
                )
    return out


def _resolve_tail(record: SelRecord, spot_at: dict, span: str) -> tuple[str, int, int]:
    for gi, group in enumerate(record.groups):
        if group.info_span == span:
            s = spot_at[gi]
            return group.spot_name, s.start, s.end
    return UNTYPED, -1, -1


def match_multisets(gold: Counter, pred: Counter) -> tuple[int, int, int]:
    """Exact-match counts ``(tp, fp, fn)``.

    Tuples with unmatched offsets never count as true positives.
    """
    tp = sum(
        min(count, pred.get(t, 0)) for t, count in gold.items() if t.grounded
    )
    n_pred = sum(pred.values())
    n_gold = sum(gold.values())
    return tp, n_pred - tp, n_gold - tp


def score_instance(gold: SelRecord, pred: SelRecord, text: str, task_kind) -> PrfScore:
    return PrfScore(
        *match_multisets(to_tuples(gold, text, task_kind), to_tuples(pred, text, task_kind))
    )


def micro_f1(counts: Iterable[PrfScore | tuple[int, int, int]]) -> PrfScore:
    total = PrfScore(0, 0, 0)
    for c in counts:
        total = total + (c if isinstance(c, PrfScore) else PrfScore(*c))
    return total


def entity_count(record: SelRecord, text: str) -> int:
    """Number of gold NER tuples, used for structure-complexity buckets."""
    return sum(to_tuples(record, text, TaskKind.NER).values())


def entity_buckets(edges: Sequence[int] = (1, 2, 3, 4)) -> Callable[[int], str]:
    """Bucketing by entity count.

    ``edges=(1, 2, 4)`` gives buckets ``<1``, ``1``, ``2-3`` and ``>=4``.
    An empty ``edges`` puts everything in one bucket ``all``.
    """
    edges = sorted(edges)

    def bucket(n: int) -> str:
        if not edges:
            return "all"
        if n < edges[0]:
            return f"<{edges[0]}"
        for lo, hi in zip(edges, edges[1:]):
            if lo <= n < hi:
                return str(lo) if hi == lo + 1 else f"{lo}-{hi - 1}"
        return f">={edges[-1]}"

    return bucket


def bucket_names(edges: Sequence[int] = (1, 2, 3, 4)) -> list[str]:
    """Every name :func:`entity_buckets` can return for ``edges``, in order."""
    edges = sorted(edges)
    if not edges:
        return ["all"]
    bucket = entity_buckets(edges)
    return [f"<{edges[0]}"] + [bucket(lo) for lo in edges[:-1]] + [f">={edges[-1]}"]


def score_grouped(
    dataset: Iterable[tuple[SelRecord, SelRecord, str]],
    task_kind,
    group_by: Callable[[int], str] | None = None,
    buckets: Iterable[str] = (),
) -> dict[str, PrfScore]:
    """Micro-F1 per bucket of gold entity count.

    ``dataset`` yields ``(gold, pred, text)``. Names in ``buckets`` are
    reported even when empty.
    """
    group_by = group_by or entity_buckets()
    out: dict[str, PrfScore] = {b: PrfScore(0, 0, 0) for b in buckets}
    for gold, pred, text in dataset:
        key = group_by(entity_count(gold, text))
        out[key] = out.get(key, PrfScore(0, 0, 0)) + score_instance(gold, pred, text, task_kind)
    return out
