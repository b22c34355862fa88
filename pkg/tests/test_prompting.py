import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from urtf.prompting import (
    ASSO,
    SENTINELS,
    SPOT,
    TEXT,
    CorruptionPair,
    EmptySchema,
    assemble_extraction_input,
    assemble_retrieval_input,
    build_ssi,
    corrupt_text,
    sample_schema_negatives,
    uncorrupt,
)
from urtf.sel import Schema, SelRecord, parse_sel, tokenize_sel


def test_prompt_layout():
    assert str(build_ssi(Schema({"LOC"}, {"Located_In"}))) == "[spot] LOC [asso] Located_In [text]"
    assert str(build_ssi(Schema({"B", "A"}))) == "[spot] A [spot] B [text]"


def test_prompt_is_deterministic():
    schema = Schema({f"S{i}" for i in range(12)}, {f"R{i}" for i in range(5)})
    assert build_ssi(schema) == build_ssi(schema)
    a = build_ssi(schema, "shuffle", np.random.default_rng(3))
    b = build_ssi(schema, "shuffle", np.random.default_rng(3))
    assert a == b
    assert sorted(a.spots) == sorted(schema.spots)


def test_prompt_needs_a_schema():
    with pytest.raises(EmptySchema):
        build_ssi(Schema())
    with pytest.raises(ValueError):
        build_ssi(Schema({"A"}), "shuffle")


@given(
    st.sets(st.from_regex(r"[A-Z][a-z_]{0,5}", fullmatch=True), max_size=8),
    st.sets(st.from_regex(r"[a-z][A-Z_]{0,5}", fullmatch=True), max_size=8),
    st.integers(0, 2**32 - 1),
)
def test_prompt_shape(spots, assos, seed):
    if not spots and not assos:
        return
    ssi = build_ssi(Schema(spots, assos), "shuffle", np.random.default_rng(seed))
    tokens = ssi.tokens
    assert tokens[-1] == TEXT and tokens.count(TEXT) == 1
    markers = tokens[:-1:2]
    assert list(markers) == [SPOT] * len(spots) + [ASSO] * len(assos)
    assert len(set(ssi.spots)) == len(spots) and set(ssi.spots) == spots
    assert len(set(ssi.assos)) == len(assos) and set(ssi.assos) == assos


POOL = Schema({f"S{i:02d}" for i in range(60)}, {f"R{i:02d}" for i in range(40)})


def test_negatives_default_to_ten_each():
    own = Schema({"S01"}, {"R01"})
    out = sample_schema_negatives(own, POOL, rng=np.random.default_rng(0))
    assert len(out.spots) == 11 and len(out.assos) == 11
    assert out.issuperset(own)


def test_negatives_from_a_pool_equal_to_the_instance():
    own = Schema({"A", "B"}, {"r"})
    assert sample_schema_negatives(own, own, rng=np.random.default_rng(0)) == own


def test_negatives_are_seeded():
    own = Schema({"S05"}, set())
    a = sample_schema_negatives(own, POOL, rng=np.random.default_rng(11))
    b = sample_schema_negatives(own, POOL, rng=np.random.default_rng(11))
    assert a == b


def test_negatives_need_a_covering_pool():
    with pytest.raises(ValueError):
        sample_schema_negatives(Schema({"X"}), POOL)


@given(st.integers(0, 10), st.integers(0, 10), st.integers(0, 2**32 - 1))
def test_negatives_keep_gold_and_stay_in_pool(n_spot, n_asso, seed):
    own = Schema({"S00", "S07"}, {"R03"})
    out = sample_schema_negatives(own, POOL, n_spot, n_asso, np.random.default_rng(seed))
    assert out.issuperset(own) and POOL.issuperset(out)
    assert len(out.spots) == 2 + n_spot and len(out.assos) == 1 + n_asso


def test_small_pool_gives_fewer_negatives():
    own = Schema({"A"}, set())
    out = sample_schema_negatives(own, Schema({"A", "B", "C"}, {"r"}), rng=np.random.default_rng(0))
    assert out == Schema({"A", "B", "C"}, {"r"})


SSI3 = build_ssi(Schema({"X"}))  # "[spot] X [text]"


def test_retrieval_input():
    text = "a b c d e".split()
    assert len(assemble_retrieval_input(SSI3, text)) == 8
    assert assemble_retrieval_input(SSI3, []).tokens == SSI3.tokens
    assert assemble_retrieval_input(SSI3, text).kind == "retrieval"


def test_extraction_input_with_empty_knowledge():
    x = assemble_extraction_input(SSI3, ["a"], SelRecord(()))
    assert x.tokens[-2:] == ("(", ")")
    assert x.kind == "extraction"


@given(st.lists(st.sampled_from(["a", "b", "w1", "w2"]), max_size=10))
def test_extraction_input_is_retrieval_input_plus_knowledge(text):
    knowledge = parse_sel("((X: a(r: b))(X: w1))")
    k = tokenize_sel("((X: a(r: b))(X: w1))")
    retr = assemble_retrieval_input(SSI3, text)
    ext = assemble_extraction_input(SSI3, text, knowledge)
    assert len(ext) == len(SSI3) + len(text) + len(k)
    assert ext.tokens[: len(retr)] == retr.tokens
    assert list(ext.tokens[len(retr):]) == k


def test_one_token_text():
    removed = set()
    for seed in range(50):
        pair = corrupt_text(["only"], rng=np.random.default_rng(seed))
        removed.add(pair.removed)
        assert uncorrupt(pair) == ["only"]
        if pair.removed:
            assert pair.corrupted_input == (SENTINELS[0],)
            assert pair.target == (SENTINELS[0], "only")
    assert removed <= {0, 1}


def test_corruption_preconditions():
    with pytest.raises(ValueError):
        corrupt_text([], rng=np.random.default_rng(0))
    for rate in (0, 1, -0.1):
        with pytest.raises(ValueError):
            corrupt_text(["a"], rate=rate)
    with pytest.raises(ValueError):
        corrupt_text(["a"], mean_span=0.5)


def _check_pair(text, pair: CorruptionPair):
    assert uncorrupt(pair) == list(text)
    sentinels = [t for t in pair.corrupted_input if t in SENTINELS]
    assert sentinels == list(SENTINELS[: pair.spans])
    assert [t for t in pair.target if t in SENTINELS] == sentinels
    assert len(pair.target) == pair.removed + pair.spans
    # no two sentinels are adjacent: every sentinel stands for one whole span
    for a, b in zip(pair.corrupted_input, pair.corrupted_input[1:]):
        assert not (a in SENTINELS and b in SENTINELS)


@given(st.integers(1, 300), st.floats(0.01, 0.9), st.floats(1, 8), st.integers(0, 2**32 - 1))
def test_corruption_reconstructs(n, rate, mean_span, seed):
    text = [f"t{i}" for i in range(n)]
    _check_pair(text, corrupt_text(text, rate, mean_span, np.random.default_rng(seed)))


def test_corruption_statistics_small_sample():
    rng = np.random.default_rng(0)
    text = [f"t{i}" for i in range(100)]
    pairs = [corrupt_text(text, rng=rng) for _ in range(1000)]
    fraction = np.mean([p.removed / 100 for p in pairs])
    span = sum(p.removed for p in pairs) / sum(p.spans for p in pairs)
    assert 0.13 <= fraction <= 0.17
    assert 2.5 <= span <= 3.5
