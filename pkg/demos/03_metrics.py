"""Scoring predictions by span offsets.

Predicted spans are grounded back into the text before comparison, so a
prediction is only right if it names the same type at the same place. When a
word repeats, spans are matched left to right.
"""

from urtf.metrics import entity_buckets, micro_f1, reconstruct_offsets, score_grouped, score_instance, to_tuples
from urtf.sel import parse_sel

text = "Obama met Putin in Moscow while Putin hosted the summit."
gold = parse_sel("((person: Obama)(person: Putin(located in: Moscow))(location: Moscow)(person: Putin))")
# The prediction finds the relation but mistypes Moscow, so its tail has no
# matching spot and the relation tuple is wrong too.
pred = parse_sel("((person: Obama)(person: Putin(located in: Moscow))(location: Putin))")

for span in reconstruct_offsets(gold, text):
    kind = "spot" if span.asso is None else "asso"
    print(f"{kind} {span.text!r:10} at [{span.start}, {span.end})")

for task in ("ner", "rte"):
    print(f"\n{task} gold tuples:")
    for t in sorted(to_tuples(gold, text, task), key=str):
        print("   ", t.elements)
    print(f"{task} score:", score_instance(gold, pred, text, task))

# Micro-F1 pools counts over instances before dividing.
rows = [(gold, pred, text), (gold, gold, text), (gold, parse_sel("()"), text)]
print("\npooled ner :", micro_f1(score_instance(g, p, t, "ner") for g, p, t in rows))
print("by entities:", score_grouped(rows, "ner", entity_buckets((2, 4))))
