"""Seeded synthetic extraction tasks and the JSONL corpus format.

Each line of a corpus file is one instance::

    {"id": "i00000", "text": "...", "spots": [...], "assos": [...], "sel": "(...)"}

Paired-task files hold ``{"support": <instance>, "query": <instance>,
"class": <name>}`` per line.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Iterator

import numpy as np

from .prompting import MARKERS, SENTINELS
from .sel import Schema, SelRecord, SpotGroup, AssoGroup, linearize_sel, parse_sel, record_schema

INSTANCE_FIELDS = ("id", "text", "spots", "assos", "sel")


class IoFailure(OSError):
    pass


class ParseFailure(ValueError):
    def __init__(self, message: str, line: int | None = None, ident: str | None = None):
        where = f"line {line}" if line is not None else f"instance {ident}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.ident = ident


@dataclass(frozen=True)
class SynthConfig:
    n_spots: int = 40
    n_assos: int = 10
    n_words: int = 300
    templates_per_class: int = 3
    max_span_len: int = 2
    zipf_exponent: float = 1.0
    name_prefix: str = ""


@dataclass(frozen=True)
class TaskDistribution:
    spot_pool: tuple[str, ...]
    asso_pool: tuple[str, ...]
    vocab: tuple[str, ...]
    rules: dict[str, tuple[tuple[str, ...], ...]]
    spot_weights: np.ndarray = field(repr=False)
    asso_weights: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def schema(self) -> Schema:
        return Schema(frozenset(self.spot_pool), frozenset(self.asso_pool))


@dataclass(frozen=True)
class Instance:
    id: str
    text: str
    schema: Schema
    sel: str

    @cached_property
    def record(self) -> SelRecord:
        return parse_sel(self.sel)

    @property
    def tokens(self) -> list[str]:
        return self.text.split()

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "spots": sorted(self.schema.spots),
            "assos": sorted(self.schema.assos),
            "sel": self.sel,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Instance":
        if not isinstance(obj, dict) or set(obj) != set(INSTANCE_FIELDS):
            raise ValueError(f"expected fields {list(INSTANCE_FIELDS)}")
        return cls(
            str(obj["id"]),
            obj["text"],
            Schema(frozenset(obj["spots"]), frozenset(obj["assos"])),
            obj["sel"],
        )


def _zipf(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def gen_distribution(config: SynthConfig = SynthConfig(), seed: int = 0) -> TaskDistribution:
    """Class pools, surface vocabulary and per-class span templates.

    Class frequencies follow a Zipf law over a seeded shuffle of the pool.
    """
    if config.n_spots < 1 or config.n_assos < 1 or config.n_words < 1:
        raise ValueError("pool sizes must be >= 1")
    rng = np.random.default_rng(seed)
    p = config.name_prefix
    spots = tuple(f"{p}S{i:02d}" for i in range(config.n_spots))
    assos = tuple(f"{p}R{i:02d}" for i in range(config.n_assos))
    vocab = tuple(f"w{i:03d}" for i in range(config.n_words))
    reserved = set(MARKERS) | set(SENTINELS)
    assert not reserved & (set(spots) | set(assos) | set(vocab))

    rules = {}
    for name in spots:
        templates = []
        for _ in range(config.templates_per_class):
            length = int(rng.integers(1, config.max_span_len + 1))
            templates.append(tuple(vocab[j] for j in rng.integers(0, len(vocab), size=length)))
        rules[name] = tuple(templates)
    spot_w = _zipf(len(spots), config.zipf_exponent)[rng.permutation(len(spots))]
    asso_w = _zipf(len(assos), config.zipf_exponent)[rng.permutation(len(assos))]
    return TaskDistribution(spots, assos, vocab, rules, spot_w, asso_w, seed)


def gen_instance(
    dist: TaskDistribution,
    n_spots: int,
    n_assos: int,
    seed,
    ident: str = "",
    max_filler: int = 3,
) -> Instance:
    """One instance with ``n_spots`` spot groups and up to ``n_assos`` links.

    Every span is copied into the text, and association spans repeat the
    span of another spot group (the relation tail).
    """
    if n_spots < 0 or n_assos < 0:
        raise ValueError("counts must be >= 0")
    rng = np.random.default_rng(seed)
    vocab = dist.vocab
    text: list[str] = []
    groups: list[tuple[str, str]] = []
    for _ in range(n_spots):
        text.extend(vocab[j] for j in rng.integers(0, len(vocab), size=int(rng.integers(1, max_filler + 1))))
        name = dist.spot_pool[rng.choice(len(dist.spot_pool), p=dist.spot_weights)]
        templates = dist.rules[name]
        span = templates[int(rng.integers(len(templates)))]
        text.extend(span)
        groups.append((name, " ".join(span)))
    text.extend(vocab[j] for j in rng.integers(0, len(vocab), size=int(rng.integers(1, max_filler + 1))))

    assos: list[list[AssoGroup]] = [[] for _ in groups]
    if groups:
        for _ in range(n_assos):
            head = int(rng.integers(len(groups)))
            others = [i for i in range(len(groups)) if i != head] or [head]
            tail = others[int(rng.integers(len(others)))]
            name = dist.asso_pool[rng.choice(len(dist.asso_pool), p=dist.asso_weights)]
            assos[head].append(AssoGroup(name, groups[tail][1]))
    record = SelRecord(tuple(SpotGroup(n, s, tuple(a)) for (n, s), a in zip(groups, assos)))
    return Instance(ident, " ".join(text), record_schema(record), linearize_sel(record))


def gen_corpus(
    dist: TaskDistribution,
    n: int,
    seed: int = 0,
    max_spots: int = 3,
    max_assos: int = 2,
    prefix: str = "i",
) -> Iterator[Instance]:
    """``n`` instances with 1..max_spots spots and 0..max_assos links each."""
    rng = np.random.default_rng(seed)
    width = max(5, len(str(n)))
    for i in range(n):
        n_spots = int(rng.integers(1, max_spots + 1))
        n_assos = int(rng.integers(0, max_assos + 1))
        yield gen_instance(dist, n_spots, n_assos, (seed, i), ident=f"{prefix}{i:0{width}d}")


def check_instance(inst: Instance) -> list[str]:
    """Problems with ``inst`` (empty when it is well formed)."""
    problems = []
    try:
        record = inst.record
    except ValueError as exc:
        return [f"sel does not parse: {exc}"]
    if linearize_sel(record) != inst.sel:
        problems.append("sel is not canonical")
    for g in record.groups:
        for span in [g.info_span] + [a.info_span for a in g.assos]:
            if span not in inst.text:
                problems.append(f"span {span!r} not in text")
    if not inst.schema.issuperset(record_schema(record)):
        problems.append("schema does not cover the record")
    return problems


# --------------------------------------------------------------------------
# JSONL


def dumps_instance(inst: Instance) -> str:
    return json.dumps(inst.to_json(), ensure_ascii=False)


def write_corpus(instances: Iterable[Instance], path: str | os.PathLike) -> int:
    """Write one JSON object per line; returns the number written."""
    n = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for inst in instances:
                fh.write(dumps_instance(inst))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return n


def _lines(path) -> Iterator[tuple[int, str]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    yield lineno, line
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_corpus(
    path: str | os.PathLike, on_error: Callable[[ParseFailure], None] | None = None
) -> Iterator[Instance]:
    """Stream instances from a JSONL file.

    A malformed line raises :class:`ParseFailure` carrying its line number,
    unless ``on_error`` is given, in which case it receives the failure and
    the line is skipped.
    """
    for lineno, line in _lines(path):
        try:
            inst = Instance.from_json(json.loads(line))
        except (ValueError, TypeError, KeyError) as exc:
            failure = ParseFailure(str(exc), line=lineno)
            if on_error is None:
                raise failure from exc
            on_error(failure)
            continue
        yield inst


@dataclass(frozen=True)
class PairedTask:
    """One simulated task: a single support and a single query instance."""

    support: Instance
    query: Instance
    cls: str = ""

    @property
    def is_self_pair(self) -> bool:
        return self.support.id == self.query.id


def write_tasks(tasks: Iterable[PairedTask], path: str | os.PathLike) -> int:
    n = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in tasks:
                obj = {"support": t.support.to_json(), "query": t.query.to_json(), "class": t.cls}
                fh.write(json.dumps(obj, ensure_ascii=False))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return n


def read_tasks(path: str | os.PathLike) -> Iterator[PairedTask]:
    for lineno, line in _lines(path):
        try:
            obj = json.loads(line)
            yield PairedTask(
                Instance.from_json(obj["support"]), Instance.from_json(obj["query"]), obj["class"]
            )
        except (ValueError, TypeError, KeyError) as exc:
            raise ParseFailure(str(exc), line=lineno) from exc
