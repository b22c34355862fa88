"""Support-query pairing over a class-partitioned corpus.

Pipeline:

1. Partition instance ids by every class (spot or association name) their
   record mentions.
2. Deduplicate: visit classes from smallest to largest and keep each
   instance only in the first class that claims it.
3. Inside each class, build a complete graph weighted by the matching score
   and take a maximum-weight matching. Each matched pair becomes one task;
   an odd node out becomes a self-paired task.

``pair_corpus`` does this with exactly two sequential reads of the corpus:
the first collects ids and class sets, the second streams the instances
out into paired tasks.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .blossom import max_weight_matching_dense
from .sel import SelError, extract_class_set, parse_sel
from .synth import Instance, IoFailure, PairedTask, ParseFailure, read_corpus

log = logging.getLogger(__name__)

DEFAULT_EXACT_THRESHOLD = 200


class EmptyClassSet(ValueError):
    pass


@dataclass
class ClassIndex:
    classes: dict[str, list[str]] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        return {c: len(ids) for c, ids in self.classes.items()}

    def __len__(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class PairingGraph:
    nodes: tuple[str, ...]
    weights: Mapping[tuple[int, int], Fraction | float]

    def weight(self, i: int, j: int):
        return self.weights[(i, j) if i < j else (j, i)]


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[str, str], ...]
    leftovers: tuple[str, ...]
    total_weight: Fraction | float
    matcher: str


# --------------------------------------------------------------------------
# Partition and deduplication


def class_set(item) -> frozenset[str]:
    if isinstance(item, Instance):
        return extract_class_set(item.record)
    return frozenset(item)


def partition_by_class(
    corpus: Iterable[Instance], skipped: list[str] | None = None
) -> tuple[ClassIndex, dict[str, frozenset[str]]]:
    """Index ids under every class of their record, in one pass.

    Returns the index and the id -> class-set map. Ids whose SEL fails to
    parse are appended to ``skipped`` and logged.
    """
    classes: dict[str, list[str]] = defaultdict(list)
    sets: dict[str, frozenset[str]] = {}
    for inst in corpus:
        try:
            names = extract_class_set(parse_sel(inst.sel))
        except SelError as exc:
            log.warning("%s", ParseFailure(str(exc), ident=inst.id))
            if skipped is not None:
                skipped.append(inst.id)
            continue
        if not names:
            log.info("instance %s has no classes", inst.id)
        sets[inst.id] = names
        for name in sorted(names):
            classes[name].append(inst.id)
    return ClassIndex(dict(classes)), sets


def deduplicate(index: ClassIndex) -> ClassIndex:
    """Keep each instance only in the smallest class containing it.

    Classes are visited by ascending size, ties by name; the result lists
    classes in that order.
    """
    order = sorted(index.classes, key=lambda c: (len(index.classes[c]), c))
    seen: set[str] = set()
    out: dict[str, list[str]] = {}
    for c in order:
        kept = [i for i in index.classes[c] if i not in seen]
        seen.update(kept)
        out[c] = kept
    return ClassIndex(out)


# --------------------------------------------------------------------------
# Scores


@lru_cache(maxsize=1 << 16)
def _directed_score(support: frozenset[str], query: frozenset[str]) -> Fraction:
    if not support:
        raise EmptyClassSet("support instance has no classes")
    return Fraction(len(support & query) + 1, len(support))


def pairing_score(support, query) -> Fraction:
    """Coverage of the query's classes by the support, plus 1/|support|."""
    return _directed_score(class_set(support), class_set(query))


def matching_score(x, y) -> Fraction:
    cx, cy = class_set(x), class_set(y)
    if not cx or not cy:
        raise EmptyClassSet("both instances need classes")
    return max(_directed_score(cx, cy), _directed_score(cy, cx))


def build_graph(nodes: Sequence[str], sets: Mapping[str, frozenset[str]]) -> PairingGraph:
    weights = {}
    for i, j in combinations(range(len(nodes)), 2):
        weights[(i, j)] = matching_score(sets[nodes[i]], sets[nodes[j]])
    return PairingGraph(tuple(nodes), weights)


def score_matrix(class_sets: Sequence[frozenset[str]]) -> tuple[np.ndarray, int]:
    """All pairwise matching scores as integers over a common denominator.

    Returns ``(W, denom)`` with ``W[i, j] / denom`` equal to the matching
    score of sets ``i`` and ``j`` (diagonal included).
    """
    if any(not s for s in class_sets):
        raise EmptyClassSet("both instances need classes")
    names = sorted(set().union(*class_sets)) if class_sets else []
    col = {c: k for k, c in enumerate(names)}
    member = np.zeros((len(class_sets), len(names)), dtype=np.int64)
    for i, s in enumerate(class_sets):
        member[i, [col[c] for c in s]] = 1
    sizes = member.sum(axis=1)
    denom = 1
    for size in set(sizes.tolist()):
        denom = math.lcm(denom, size)
    if denom * (len(names) + 1) > 1 << 40:
        raise OverflowError("class sets too varied for exact integer weights")
    scaled = (member @ member.T + 1) * (denom // sizes)[:, None]
    return np.maximum(scaled, scaled.T), denom


def _dense_weights(graph: PairingGraph) -> tuple[np.ndarray, int]:
    n = len(graph.nodes)
    values = list(graph.weights.values())
    denom = 1
    for w in values:
        denom = math.lcm(denom, Fraction(w).denominator)
    w = np.zeros((n, n), dtype=np.int64)
    for (i, j), value in graph.weights.items():
        w[i, j] = w[j, i] = int(Fraction(value) * denom)
    return w, denom


def exact_matching(graph: PairingGraph) -> Matching:
    """Maximum-weight matching via Edmonds' blossom algorithm.

    Rational weights are scaled to integers so the optimum is exact.
    """
    w, _ = _dense_weights(graph)
    return _finish(graph, max_weight_matching_dense(w), "exact")


def greedy_matching(graph: PairingGraph) -> Matching:
    """Greedy matching by descending weight, ties by node index.

    Its total weight is at least half the optimum.
    """
    order = sorted(graph.weights.items(), key=lambda kv: (-kv[1], kv[0]))
    used: set[int] = set()
    pairs = []
    for (i, j), w in order:
        if w > 0 and i not in used and j not in used:
            used.update((i, j))
            pairs.append((i, j))
    return _finish(graph, sorted(pairs), "greedy")


def _finish(graph: PairingGraph, pairs: list[tuple[int, int]], matcher: str) -> Matching:
    matched = {i for p in pairs for i in p}
    total = sum((Fraction(graph.weight(*p)) for p in pairs), Fraction(0))
    return Matching(
        tuple((graph.nodes[i], graph.nodes[j]) for i, j in pairs),
        tuple(graph.nodes[i] for i in range(len(graph.nodes)) if i not in matched),
        total,
        matcher,
    )


def max_weight_matching(
    graph: PairingGraph, exact_threshold: int = DEFAULT_EXACT_THRESHOLD
) -> Matching:
    """Exact matching up to ``exact_threshold`` nodes, greedy above.

    The greedy fallback is an approximation: its weight is only guaranteed
    to be at least half of the optimum.
    """
    if len(graph.nodes) <= exact_threshold:
        return exact_matching(graph)
    return greedy_matching(graph)


def exact_by_class_set(nodes: Sequence[str], sets: Mapping[str, frozenset[str]]) -> Matching:
    """Same result as ``exact_matching(build_graph(nodes, sets))``, faster."""
    nodes = list(nodes)
    w, denom = score_matrix([sets[n] for n in nodes])
    np.fill_diagonal(w, 0)
    pairs = max_weight_matching_dense(w)
    matched = {i for p in pairs for i in p}
    return Matching(
        tuple((nodes[i], nodes[j]) for i, j in pairs),
        tuple(nodes[i] for i in range(len(nodes)) if i not in matched),
        Fraction(int(sum(int(w[i, j]) for i, j in pairs)), denom),
        "exact",
    )


def greedy_by_class_set(nodes: Sequence[str], sets: Mapping[str, frozenset[str]]) -> Matching:
    """Greedy matching for large classes without materialising the graph.

    Nodes with equal class sets are interchangeable, so edges are handled in
    bulk per pair of distinct class sets, in descending weight order. Ties
    go to the set seen first. Like any greedy matching taken in weight
    order, the total is at least half the optimum.
    """
    groups: dict[frozenset[str], list[str]] = {}
    for node in nodes:
        groups.setdefault(sets[node], []).append(node)
    keys = list(groups)  # first-appearance order
    w, denom = score_matrix(keys)
    a, b = np.triu_indices(len(keys))
    order = np.lexsort((b, a, -w[a, b]))
    avail = {k: list(reversed(groups[k])) for k in keys}
    pairs: list[tuple[str, str]] = []
    total = 0
    for e in order:
        ka, kb, weight = keys[a[e]], keys[b[e]], int(w[a[e], b[e]])
        pa, pb = avail[ka], avail[kb]
        if ka is kb:
            while len(pa) >= 2:
                pairs.append((pa.pop(), pa.pop()))
                total += weight
        else:
            while pa and pb:
                pairs.append((pa.pop(), pb.pop()))
                total += weight
    leftovers = tuple(n for k in keys for n in reversed(avail[k]))
    return Matching(tuple(pairs), leftovers, Fraction(total, denom), "greedy")


def match_class(
    nodes: Sequence[str],
    sets: Mapping[str, frozenset[str]],
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD,
) -> Matching:
    if len(nodes) <= exact_threshold:
        return exact_by_class_set(nodes, sets)
    return greedy_by_class_set(nodes, sets)


def assign_roles(x: Instance, y: Instance, cls: str = "") -> PairedTask:
    """The member whose classes cover the other's better supports it.

    Ties go to the smaller id. A pair of one instance with itself gives a
    self-paired task.
    """
    if x.id == y.id:
        return PairedTask(x, x, cls)
    forward, backward = pairing_score(x, y), pairing_score(y, x)
    if forward > backward or (forward == backward and x.id < y.id):
        return PairedTask(x, y, cls)
    return PairedTask(y, x, cls)


def _orient(a: str, b: str, sets: Mapping[str, frozenset[str]]) -> tuple[str, str]:
    forward, backward = _directed_score(sets[a], sets[b]), _directed_score(sets[b], sets[a])
    if forward > backward or (forward == backward and a < b):
        return a, b
    return b, a


# --------------------------------------------------------------------------
# Two-pass corpus pipeline


@dataclass(frozen=True)
class PairingConfig:
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD
    threads: int = 1


@dataclass
class PairingReport:
    instances: int = 0
    classes: int = 0
    pairs: int = 0
    self_pairs: int = 0
    skipped: int = 0
    unclassed: int = 0
    read_passes: int = 0
    wall_time_ms: float = 0.0
    matcher: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "instances": self.instances,
            "classes": self.classes,
            "pairs": self.pairs,
            "self_pairs": self.self_pairs,
            "skipped": self.skipped,
            "unclassed": self.unclassed,
            "read_passes": self.read_passes,
            "wall_time_ms": round(self.wall_time_ms, 3),
            "matcher": dict(self.matcher),
        }


class CountingCorpus:
    """Re-iterable corpus reader that counts full sequential passes."""

    def __init__(self, path: str | os.PathLike, on_error=None):
        self.path = path
        self.on_error = on_error
        self.passes = 0

    def __iter__(self) -> Iterator[Instance]:
        self.passes += 1
        return read_corpus(self.path, on_error=self.on_error)


def plan_pairs(
    sets: Mapping[str, frozenset[str]], index: ClassIndex, config: PairingConfig = PairingConfig()
) -> tuple[list[tuple[str, str, str]], dict[str, str]]:
    """Oriented ``(support, query, class)`` triples for a deduplicated index."""
    work = [(c, ids) for c, ids in index.classes.items() if ids]

    def run(item):
        c, ids = item
        return c, match_class(ids, sets, config.exact_threshold)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(item) for item in work]

    plan: list[tuple[str, str, str]] = []
    matchers: dict[str, str] = {}
    for c, m in results:
        matchers[c] = m.matcher
        for a, b in m.pairs:
            s, q = _orient(a, b, sets)
            plan.append((s, q, c))
        for leftover in m.leftovers:
            plan.append((leftover, leftover, c))
    return plan, matchers


def pair_corpus(
    corpus_path: str | os.PathLike,
    output_path: str | os.PathLike,
    config: PairingConfig = PairingConfig(),
) -> PairingReport:
    """Pair a JSONL corpus into a JSONL task file with two corpus reads."""
    t0 = time.perf_counter()
    report = PairingReport()
    bad_lines: list[ParseFailure] = []
    corpus = CountingCorpus(corpus_path, on_error=bad_lines.append)

    # pass 1: ids and class sets only
    skipped_ids: list[str] = []
    index, sets = partition_by_class(_counted(corpus, report), skipped_ids)
    report.unclassed = sum(1 for s in sets.values() if not s)
    index = deduplicate(index)
    report.classes = sum(1 for ids in index.classes.values() if ids)
    plan, report.matcher = plan_pairs(sets, index, config)

    # pass 2: stream instances out as soon as both members of a task are seen;
    # deduplication puts every id in exactly one task
    task_of: dict[str, int] = {}
    for k, (sup, qry, _) in enumerate(plan):
        task_of[sup] = k
        task_of[qry] = k
    pending: dict[str, Instance] = {}
    try:
        with open(output_path, "w", encoding="utf-8", newline="\n") as out:
            for inst in corpus:
                k = task_of.get(inst.id)
                if k is None:
                    continue
                pending[inst.id] = inst
                sup, qry, c = plan[k]
                if sup in pending and qry in pending:
                    obj = {
                        "support": pending.pop(sup).to_json(),
                        "query": (pending.pop(qry) if qry != sup else inst).to_json(),
                        "class": c,
                    }
                    out.write(json.dumps(obj, ensure_ascii=False))
                    out.write("\n")
                    if sup == qry:
                        report.self_pairs += 1
                    else:
                        report.pairs += 1
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    # a malformed line is seen on both passes
    report.skipped = len({f.line for f in bad_lines}) + len(skipped_ids)
    report.read_passes = corpus.passes
    report.wall_time_ms = (time.perf_counter() - t0) * 1000
    assert report.read_passes == 2, report.read_passes
    return report


def _counted(corpus: CountingCorpus, report: PairingReport) -> Iterator[Instance]:
    for inst in corpus:
        report.instances += 1
        yield inst


# --------------------------------------------------------------------------
# Episodic baseline


@dataclass
class EpisodicReport:
    tasks: int = 0
    read_passes: int = 0
    random_reads: int = 0
    lines_scanned: int = 0
    wall_time_ms: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def simulate_episodic(
    corpus_path: str | os.PathLike, n_tasks: int | None = None, seed: int = 0
) -> EpisodicReport:
    """Build 1-shot support/query tasks by class-conditioned random access.

    A model of episodic sampling over a corpus that does not fit in memory:
    one pass learns the class universe, then each draw opens the file,
    seeks to a random byte offset and reads forward (wrapping at the end)
    until it finds an instance of the sampled class. Tasks pick their class
    uniformly. Nothing but the class list is kept in memory.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    report = EpisodicReport()
    classes: set[str] = set()
    n_instances = 0
    for inst in read_corpus(corpus_path, on_error=lambda e: None):
        n_instances += 1
        try:
            classes |= extract_class_set(parse_sel(inst.sel))
        except SelError:
            pass
    report.read_passes = 1
    ordered = sorted(classes)
    if n_tasks is None:
        n_tasks = (n_instances + 1) // 2
    size = os.path.getsize(corpus_path)
    if not ordered or size == 0:
        report.wall_time_ms = (time.perf_counter() - t0) * 1000
        return report

    for _ in range(n_tasks):
        c = ordered[int(rng.integers(len(ordered)))]
        support = _seek_class(corpus_path, size, c, int(rng.integers(size)), None, report)
        _seek_class(corpus_path, size, c, int(rng.integers(size)), support, report)
        report.tasks += 1
    report.wall_time_ms = (time.perf_counter() - t0) * 1000
    return report


def _seek_class(path, size: int, cls: str, offset: int, exclude: str | None, report: EpisodicReport):
    report.random_reads += 1
    fallback = None
    with open(path, "rb") as fh:
        fh.seek(offset)
        if offset:
            fh.readline()  # realign to a line start
        wrapped = False
        while True:
            if wrapped and fh.tell() > offset:
                return fallback
            line = fh.readline()
            if not line:
                if wrapped:
                    return fallback
                wrapped = True
                fh.seek(0)
                continue
            report.lines_scanned += 1
            try:
                obj = json.loads(line)
                names = extract_class_set(parse_sel(obj["sel"]))
            except (ValueError, KeyError, TypeError):
                continue
            if cls in names:
                if obj["id"] != exclude:
                    return obj["id"]
                fallback = obj["id"]
