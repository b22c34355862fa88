import json
from fractions import Fraction
from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from urtf.blossom import max_weight_matching_dense
from urtf.pairing import (
    ClassIndex,
    EmptyClassSet,
    PairingConfig,
    PairingGraph,
    assign_roles,
    build_graph,
    deduplicate,
    exact_by_class_set,
    exact_matching,
    greedy_by_class_set,
    greedy_matching,
    matching_score,
    max_weight_matching,
    pair_corpus,
    pairing_score,
    partition_by_class,
    score_matrix,
    simulate_episodic,
)
from urtf.sel import Schema
from urtf.synth import Instance, SynthConfig, gen_corpus, gen_distribution, read_tasks, write_corpus

from oracles import max_matching_weight, directed_score


def inst(ident, sel, text="x y z"):
    from urtf.sel import extract_class_set, parse_sel

    return Instance(ident, text, Schema(extract_class_set(parse_sel(sel))), sel)


# --------------------------------------------------------------------------
# Scores


def test_pairing_score_hand_values():
    assert pairing_score({"A"}, {"A"}) == 2
    assert pairing_score({"A", "B"}, {"A"}) == 1
    assert pairing_score({"A"}, {"B"}) == 1
    assert isinstance(pairing_score({"A"}, {"A"}), Fraction)


def test_matching_score_hand_values():
    assert matching_score({"A", "B"}, {"A"}) == 2
    assert matching_score({"A"}, {"B"}) == 1
    for k in range(1, 6):
        same = {f"C{i}" for i in range(k)}
        assert matching_score(same, set(same)) == 1 + Fraction(1, k)


def test_scores_accept_instances():
    a = inst("a", "((A: x)(B: y))")
    b = inst("b", "((A: z))")
    assert pairing_score(a, b) == 1 and pairing_score(b, a) == 2


def test_empty_class_sets_are_rejected():
    with pytest.raises(EmptyClassSet):
        pairing_score(set(), {"A"})
    with pytest.raises(EmptyClassSet):
        matching_score({"A"}, set())


def test_scores_match_the_definition_and_are_symmetric():
    rng = np.random.default_rng(0)
    names = [f"C{i}" for i in range(8)]
    for _ in range(2000):
        x = {names[i] for i in rng.choice(8, size=rng.integers(1, 6), replace=False)}
        y = {names[i] for i in rng.choice(8, size=rng.integers(1, 6), replace=False)}
        assert pairing_score(x, y) == directed_score(x, y)
        assert matching_score(x, y) == matching_score(y, x) == max(directed_score(x, y), directed_score(y, x))


def test_score_matrix_agrees_with_fractions():
    rng = np.random.default_rng(1)
    names = [f"C{i}" for i in range(6)]
    sets = [frozenset(names[i] for i in rng.choice(6, size=rng.integers(1, 5), replace=False)) for _ in range(12)]
    w, denom = score_matrix(sets)
    for i, j in combinations(range(len(sets)), 2):
        assert Fraction(int(w[i, j]), denom) == matching_score(sets[i], sets[j])
    assert np.array_equal(w, w.T)


# --------------------------------------------------------------------------
# Partition and deduplication


def test_partition_example():
    index, sets = partition_by_class([inst("1", "((A: x))"), inst("2", "((A: x)(B: y))")])
    assert index.classes == {"A": ["1", "2"], "B": ["2"]}
    assert sets["2"] == {"A", "B"}
    assert partition_by_class([])[0].classes == {}


def test_unclassed_instance_is_indexed_nowhere():
    index, sets = partition_by_class([inst("1", "()")])
    assert index.classes == {} and sets == {"1": frozenset()}


def test_unparseable_instance_is_skipped():
    skipped = []
    bad = Instance("9", "x", Schema({"A"}), "((A: x")
    index, _ = partition_by_class([bad, inst("1", "((A: x))")], skipped)
    assert skipped == ["9"] and index.classes == {"A": ["1"]}


def test_dedup_examples():
    out = deduplicate(ClassIndex({"A": ["1", "2"], "B": ["2"]}))
    assert out.classes == {"B": ["2"], "A": ["1"]}
    assert list(out.classes) == ["B", "A"]
    disjoint = ClassIndex({"A": ["1"], "B": ["2", "3"]})
    assert deduplicate(disjoint).classes == disjoint.classes
    everywhere = ClassIndex({"A": ["1", "2", "3"], "B": ["1", "2", "3", "4"], "C": ["3", "2", "1"]})
    assert deduplicate(everywhere).classes == {"A": ["1", "2", "3"], "C": [], "B": ["4"]}


def test_dedup_puts_every_instance_in_one_class():
    dist = gen_distribution(SynthConfig(), seed=3)
    corpus = list(gen_corpus(dist, 400, seed=3))
    index, sets = partition_by_class(corpus)
    seen = [i for ids in deduplicate(index).classes.values() for i in ids]
    assert sorted(seen) == sorted(sets)


# --------------------------------------------------------------------------
# Matching


def _graph(n, weight):
    return PairingGraph(tuple(str(i) for i in range(n)), {(i, j): weight(i, j) for i, j in combinations(range(n), 2)})


def test_two_nodes():
    m = exact_matching(_graph(2, lambda i, j: Fraction(3, 2)))
    assert m.pairs == (("0", "1"),) and m.leftovers == () and m.total_weight == Fraction(3, 2)


def test_four_node_example():
    heavy = {(0, 1), (2, 3)}
    m = exact_matching(_graph(4, lambda i, j: 3 if (i, j) in heavy else 2))
    assert set(m.pairs) == {("0", "1"), ("2", "3")} and m.total_weight == 6


def test_odd_node_count_leaves_one():
    m = max_weight_matching(_graph(7, lambda i, j: Fraction(i + j + 1, 7)))
    assert len(m.leftovers) == 1 and len(m.pairs) == 3


def _random_weights(rng, n):
    kind = rng.integers(3)
    if kind == 0:  # small integers with many ties
        return {(i, j): int(rng.integers(1, 4)) for i, j in combinations(range(n), 2)}
    if kind == 1:  # wide integers
        return {(i, j): int(rng.integers(1, 1000)) for i, j in combinations(range(n), 2)}
    names = [f"C{i}" for i in range(5)]  # real matching scores
    sets = [frozenset(names[k] for k in rng.choice(5, size=rng.integers(1, 4), replace=False)) for _ in range(n)]
    return {(i, j): matching_score(sets[i], sets[j]) for i, j in combinations(range(n), 2)}


def test_exact_and_greedy_against_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        weights = _random_weights(rng, n)
        graph = PairingGraph(tuple(f"n{i}" for i in range(n)), weights)
        best = max_matching_weight(n, lambda i, j: weights[(i, j)])
        exact = exact_matching(graph)
        assert exact.total_weight == best
        assert 2 * greedy_matching(graph).total_weight >= best


def test_dense_blossom_against_networkx():
    rng = np.random.default_rng(11)
    for _ in range(60):
        n = int(rng.integers(2, 40))
        w = rng.integers(0, 50, size=(n, n))
        w = np.triu(w, 1)
        w = w + w.T
        g = nx.Graph()
        g.add_nodes_from(range(n))
        g.add_weighted_edges_from((i, j, int(w[i, j])) for i, j in combinations(range(n), 2) if w[i, j])
        ours = sum(int(w[i, j]) for i, j in max_weight_matching_dense(w))
        theirs = sum(int(w[i, j]) for i, j in nx.max_weight_matching(g))
        assert ours == theirs


def test_dense_blossom_validates_input():
    with pytest.raises(ValueError):
        max_weight_matching_dense(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValueError):
        max_weight_matching_dense(np.array([[1, 1], [1, 0]]))
    with pytest.raises(ValueError):
        max_weight_matching_dense(np.array([[0, 0.5], [0.5, 0]]))
    assert max_weight_matching_dense(np.zeros((0, 0), dtype=int)) == []


def test_class_set_matchers_agree_with_graph_matchers():
    rng = np.random.default_rng(2)
    names = [f"C{i}" for i in range(6)]
    for _ in range(40):
        n = int(rng.integers(1, 30))
        nodes = [f"i{k:03d}" for k in range(n)]
        sets = {
            v: frozenset({"C0"} | {names[k] for k in rng.choice(6, size=rng.integers(0, 3), replace=False)})
            for v in nodes
        }
        graph = build_graph(nodes, sets)
        exact = exact_by_class_set(nodes, sets)
        assert exact.total_weight == exact_matching(graph).total_weight
        greedy = greedy_by_class_set(nodes, sets)
        assert 2 * greedy.total_weight >= exact.total_weight
        for m in (exact, greedy):
            used = [v for p in m.pairs for v in p] + list(m.leftovers)
            assert sorted(used) == nodes
            assert len(m.leftovers) == n % 2
            assert m.total_weight == sum((matching_score(sets[a], sets[b]) for a, b in m.pairs), Fraction(0))


# --------------------------------------------------------------------------
# Roles


def test_roles():
    x = inst("b", "((A: x)(B: y))")
    y = inst("a", "((A: z))")
    # directed_score(y, x) = 2 beats directed_score(x, y) = 1, so the narrower instance supports
    task = assign_roles(x, y)
    assert (task.support.id, task.query.id) == ("a", "b")
    tie = assign_roles(inst("q", "((A: x))"), inst("p", "((A: y))"))
    assert (tie.support.id, tie.query.id) == ("p", "q")
    solo = assign_roles(x, x)
    assert solo.support is solo.query and solo.is_self_pair


# --------------------------------------------------------------------------
# Corpus pipeline


def _write(tmp_path, instances, name="corpus.jsonl"):
    path = tmp_path / name
    write_corpus(instances, path)
    return path


def test_empty_corpus(tmp_path):
    corpus = tmp_path / "empty.jsonl"
    corpus.write_text("")
    report = pair_corpus(corpus, tmp_path / "tasks.jsonl")
    assert report.read_passes == 2
    assert (report.pairs, report.self_pairs, report.instances) == (0, 0, 0)
    assert (tmp_path / "tasks.jsonl").read_text() == ""


def test_five_instances_in_one_class(tmp_path):
    corpus = _write(tmp_path, [inst(f"i{k}", "((A: x))") for k in range(5)])
    report = pair_corpus(corpus, tmp_path / "tasks.jsonl")
    assert (report.pairs, report.self_pairs, report.read_passes) == (2, 1, 2)
    tasks = list(read_tasks(tmp_path / "tasks.jsonl"))
    assert sum(t.is_self_pair for t in tasks) == 1
    assert sorted({t.support.id for t in tasks} | {t.query.id for t in tasks}) == [f"i{k}" for k in range(5)]


def test_pipeline_writes_every_instance_once(tmp_path):
    dist = gen_distribution(SynthConfig(), seed=4)
    corpus = _write(tmp_path, gen_corpus(dist, 1500, seed=4))
    report = pair_corpus(corpus, tmp_path / "tasks.jsonl", PairingConfig(exact_threshold=50, threads=3))
    assert report.read_passes == 2
    assert set(report.matcher.values()) == {"exact", "greedy"}
    tasks = list(read_tasks(tmp_path / "tasks.jsonl"))
    ids = [t.support.id for t in tasks] + [t.query.id for t in tasks if not t.is_self_pair]
    assert sorted(ids) == sorted(f"i{k:05d}" for k in range(1500))
    assert report.pairs + report.self_pairs == len(tasks)
    for t in tasks:
        assert t.cls in t.support.schema.spots | t.support.schema.assos
        assert pairing_score(t.support, t.query) >= pairing_score(t.query, t.support)


def test_pipeline_is_deterministic_across_threads(tmp_path):
    dist = gen_distribution(SynthConfig(), seed=8)
    corpus = _write(tmp_path, gen_corpus(dist, 600, seed=8))
    pair_corpus(corpus, tmp_path / "a.jsonl", PairingConfig(threads=1))
    pair_corpus(corpus, tmp_path / "b.jsonl", PairingConfig(threads=4))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_pipeline_skips_bad_lines(tmp_path):
    corpus = _write(tmp_path, [inst("i0", "((A: x))"), inst("i1", "((A: y))")])
    with open(corpus, "a") as fh:
        fh.write("{not json}\n")
        fh.write(json.dumps({"id": "i2", "text": "x", "spots": ["A"], "assos": [], "sel": "((A: x"}) + "\n")
    report = pair_corpus(corpus, tmp_path / "tasks.jsonl")
    assert report.skipped == 2 and report.pairs == 1 and report.read_passes == 2


def test_report_json_fields(tmp_path):
    corpus = _write(tmp_path, [inst("i0", "((A: x))"), inst("i1", "()")])
    report = pair_corpus(corpus, tmp_path / "tasks.jsonl").to_json()
    for key in ("instances", "classes", "pairs", "self_pairs", "skipped", "read_passes", "wall_time_ms", "matcher"):
        assert key in report
    assert report["unclassed"] == 1
    assert report["matcher"] == {"A": "exact"}


def test_episodic_model_reads_randomly(tmp_path):
    dist = gen_distribution(SynthConfig(), seed=5)
    corpus = _write(tmp_path, gen_corpus(dist, 200, seed=5))
    report = simulate_episodic(corpus, seed=5)
    assert report.tasks == 100 and report.random_reads == 200 and report.read_passes == 1
    assert simulate_episodic(corpus, seed=5).lines_scanned == report.lines_scanned
