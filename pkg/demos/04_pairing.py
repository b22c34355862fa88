"""Turning a corpus into support/query tasks.

Instances are grouped by the classes in their records. Within a class, a
maximum-weight matching pairs instances whose class sets overlap most; the
larger side of each pair becomes the support. The whole job reads the corpus
file exactly twice, regardless of its size.
"""

import tempfile
from pathlib import Path

from urtf.pairing import build_graph, exact_matching, greedy_matching, matching_score, pair_corpus, pairing_score
from urtf.synth import SynthConfig, gen_corpus, gen_distribution, read_tasks, write_corpus

print("score({A}, {A})    =", pairing_score({"A"}, {"A"}))
print("score({A,B}, {A})  =", pairing_score({"A", "B"}, {"A"}))
print("score({A}, {A,B})  =", pairing_score({"A"}, {"A", "B"}))
print("symmetric version  =", matching_score({"A"}, {"A", "B"}))

sets = {
    "a": frozenset({"LOC", "PER"}),
    "b": frozenset({"LOC"}),
    "c": frozenset({"LOC", "PER", "ORG"}),
    "d": frozenset({"LOC", "ORG"}),
}
graph = build_graph(list(sets), sets)
for name, m in (("exact", exact_matching(graph)), ("greedy", greedy_matching(graph))):
    print(f"{name:6} matching: {m.pairs} total {m.total_weight}")

dist = gen_distribution(SynthConfig(), seed=0)
with tempfile.TemporaryDirectory() as tmp:
    corpus, tasks = Path(tmp, "corpus.jsonl"), Path(tmp, "tasks.jsonl")
    write_corpus(gen_corpus(dist, 2000, seed=0), corpus)
    report = pair_corpus(corpus, tasks)
    summary = {k: v for k, v in report.to_json().items() if k != "matcher"}
    print("\nreport:", summary)
    print("matchers used:", sorted(set(report.matcher.values())))
    first = next(read_tasks(tasks))
    print("first task class:", first.cls)
    print("   support:", first.support.sel)
    print("   query  :", first.query.sel)
