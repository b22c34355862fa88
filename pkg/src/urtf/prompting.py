"""Schema prompts, model inputs and span corruption.

The schema prompt lists every spot name after a ``[spot]`` marker and every
association name after an ``[asso]`` marker, followed by a single
``[text]`` marker::

    [spot] LOC [asso] Located_In [text]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .sel import SelRecord, Schema, linearize_sel, tokenize_sel

SPOT = "[spot]"
ASSO = "[asso]"
TEXT = "[text]"
MARKERS = (SPOT, ASSO, TEXT)
N_SENTINELS = 100
SENTINELS = tuple(f"<extra_id_{i}>" for i in range(N_SENTINELS))

DEFAULT_N_SPOT = 10
DEFAULT_N_ASSO = 10
DEFAULT_CORRUPTION_RATE = 0.15
DEFAULT_MEAN_SPAN = 3.0


class EmptySchema(ValueError):
    pass


@dataclass(frozen=True)
class SsiPrompt:
    tokens: tuple[str, ...]

    def __str__(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def spots(self) -> list[str]:
        return _names_after(self.tokens, SPOT)

    @property
    def assos(self) -> list[str]:
        return _names_after(self.tokens, ASSO)


def _names_after(tokens: Sequence[str], marker: str) -> list[str]:
    return [tokens[i + 1] for i, t in enumerate(tokens[:-1]) if t == marker]


@dataclass(frozen=True)
class ModelInput:
    kind: Literal["retrieval", "extraction", "record", "lm"]
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CorruptionPair:
    corrupted_input: tuple[str, ...]
    target: tuple[str, ...]
    removed: int
    spans: int


def build_ssi(
    schema: Schema,
    ordering: Literal["lexicographic", "shuffle"] = "lexicographic",
    rng: np.random.Generator | None = None,
) -> SsiPrompt:
    """Build the schema prompt for ``schema``.

    With ``ordering="shuffle"`` names within each marker group are permuted
    by ``rng`` (required); otherwise they are sorted.
    """
    if not schema:
        raise EmptySchema("schema has neither spots nor assos")
    spots = sorted(schema.spots)
    assos = sorted(schema.assos)
    if ordering == "shuffle":
        if rng is None:
            raise ValueError("shuffle ordering needs an rng")
        spots = [spots[i] for i in rng.permutation(len(spots))]
        assos = [assos[i] for i in rng.permutation(len(assos))]
    elif ordering != "lexicographic":
        raise ValueError(f"unknown ordering {ordering!r}")
    tokens: list[str] = []
    for name in spots:
        tokens += [SPOT, name]
    for name in assos:
        tokens += [ASSO, name]
    tokens.append(TEXT)
    return SsiPrompt(tuple(tokens))


def sample_schema_negatives(
    instance_schema: Schema,
    pool: Schema,
    n_spot: int = DEFAULT_N_SPOT,
    n_asso: int = DEFAULT_N_ASSO,
    rng: np.random.Generator | None = None,
) -> Schema:
    """Add up to ``n_spot``/``n_asso`` names drawn uniformly without
    replacement from ``pool`` minus the instance's own names."""
    if rng is None:
        rng = np.random.default_rng(0)
    if not pool.issuperset(instance_schema):
        raise ValueError("pool must contain the instance schema")

    def draw(own: frozenset[str], universe: frozenset[str], n: int) -> frozenset[str]:
        candidates = sorted(universe - own)
        k = min(n, len(candidates))
        if k == 0:
            return own
        picked = rng.choice(len(candidates), size=k, replace=False)
        return own | {candidates[i] for i in picked}

    return Schema(
        draw(instance_schema.spots, pool.spots, n_spot),
        draw(instance_schema.assos, pool.assos, n_asso),
    )


def assemble_retrieval_input(ssi: SsiPrompt, text: Sequence[str]) -> ModelInput:
    return ModelInput("retrieval", tuple(ssi.tokens) + tuple(text))


def assemble_extraction_input(
    ssi: SsiPrompt, text: Sequence[str], knowledge: SelRecord
) -> ModelInput:
    suffix = tokenize_sel(linearize_sel(knowledge))
    return ModelInput("extraction", tuple(ssi.tokens) + tuple(text) + tuple(suffix))


def corrupt_text(
    text: Sequence[str],
    rate: float = DEFAULT_CORRUPTION_RATE,
    mean_span: float = DEFAULT_MEAN_SPAN,
    rng: np.random.Generator | None = None,
) -> CorruptionPair:
    """Replace random spans of ``text`` with sentinel tokens.

    About ``rate * len(text)`` tokens are removed in ``round(removed /
    mean_span)`` spans whose lengths are a uniformly random composition of
    the removed count. Spans never touch each other, so every sentinel stands
    for exactly one removed span. The target lists each sentinel followed by
    the tokens it replaced.
    """
    if not 0 < rate < 1:
        raise ValueError("rate must be in (0, 1)")
    if mean_span < 1:
        raise ValueError("mean_span must be >= 1")
    n = len(text)
    if n < 1:
        raise ValueError("text must be nonempty")
    if rng is None:
        rng = np.random.default_rng(0)

    budget = rate * n
    # fractional budgets are rounded stochastically so the expected removed
    # fraction equals rate even for short texts
    n_remove = int(np.floor(budget))
    if rng.random() < budget - n_remove:
        n_remove += 1
    n_remove = min(n_remove, n)

    lengths: list[int] = []
    if n_remove > 0:
        # T5-style: fix the span count, then split the removed tokens into that
        # many positive parts uniformly at random; part sizes are
        # geometric-like with mean n_remove / n_spans
        n_spans = max(1, int(round(n_remove / mean_span)))
        n_spans = min(n_spans, n_remove, N_SENTINELS, n - n_remove + 1)
        cuts = np.sort(rng.choice(np.arange(1, n_remove), size=n_spans - 1, replace=False))
        lengths = np.diff(np.concatenate([[0], cuts, [n_remove]])).astype(int).tolist()
    if not lengths:
        return CorruptionPair(tuple(text), (), 0, 0)

    # distribute the kept tokens into len(lengths) + 1 gaps, inner gaps >= 1
    kept = n - sum(lengths)
    n_gaps = len(lengths) + 1
    free = kept - (len(lengths) - 1)
    cuts = np.sort(rng.integers(0, free + 1, size=n_gaps - 1))
    gaps = np.diff(np.concatenate([[0], cuts, [free]])).tolist()
    for i in range(1, n_gaps - 1):
        gaps[i] += 1

    corrupted: list[str] = []
    target: list[str] = []
    pos = 0
    for i, length in enumerate(lengths):
        corrupted.extend(text[pos : pos + gaps[i]])
        pos += gaps[i]
        sentinel = SENTINELS[i]
        corrupted.append(sentinel)
        target.append(sentinel)
        target.extend(text[pos : pos + length])
        pos += length
    corrupted.extend(text[pos:])
    return CorruptionPair(tuple(corrupted), tuple(target), sum(lengths), len(lengths))


def uncorrupt(pair: CorruptionPair) -> list[str]:
    """Reinsert the removed spans at their sentinels."""
    spans: dict[str, list[str]] = {}
    current: list[str] | None = None
    for tok in pair.target:
        if tok in _SENTINEL_SET:
            current = spans.setdefault(tok, [])
        elif current is not None:
            current.append(tok)
    out: list[str] = []
    for tok in pair.corrupted_input:
        out.extend(spans[tok] if tok in _SENTINEL_SET else [tok])
    return out


_SENTINEL_SET = frozenset(SENTINELS)
