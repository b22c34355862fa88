"""Building model inputs from a schema.

The schema prompt lists every spot and association name behind its marker,
then the text follows. During pre-training the prompt is padded with
negative names sampled from the wider pool, and plain text is trained with a
span-corruption objective.
"""

import numpy as np

from urtf.prompting import (
    assemble_extraction_input,
    assemble_retrieval_input,
    build_ssi,
    corrupt_text,
    sample_schema_negatives,
    uncorrupt,
)
from urtf.sel import Schema, parse_sel

rng = np.random.default_rng(0)
schema = Schema(spots=frozenset({"person", "organization"}), assos=frozenset({"work for"}))
text = "Steve became CEO of Apple in 1997 .".split()

ssi = build_ssi(schema)
print("prompt     :", " ".join(ssi.tokens))
print("shuffled   :", " ".join(build_ssi(schema, "shuffle", rng).tokens))

pool = Schema(spots=frozenset(f"S{i}" for i in range(30)) | schema.spots,
              assos=frozenset(f"A{i}" for i in range(30)) | schema.assos)
padded = sample_schema_negatives(schema, pool, rng=rng)
print("with negs  :", len(padded.spots), "spots and", len(padded.assos), "assos")

knowledge = parse_sel("((person: Steve)(organization: Apple))")
print("retrieval  :", " ".join(assemble_retrieval_input(ssi, text).tokens))
print("extraction :", " ".join(assemble_extraction_input(ssi, text, knowledge).tokens))

words = [f"w{i}" for i in range(40)]
pair = corrupt_text(words, rng=rng)
print("corrupted  :", " ".join(pair.corrupted_input))
print("target     :", " ".join(pair.target))
print("removed", pair.removed, "tokens in", pair.spans, "spans; restores:", uncorrupt(pair) == words)
