import json
import subprocess
import sys

import pytest

from urtf.cli import main


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("URTF_SEED", raising=False)


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    assert main(["synth", "gen", "--n", "80", "--seed", "3", "--out", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_roundtrip_on_a_generated_corpus(corpus, capsys):
    code, out, _ = run(capsys, "sel", "roundtrip", corpus)
    assert code == 0 and out.strip() == "roundtrip: 80/80 ok"


def test_parse_prints_canonical_forms_and_flags_offsets(tmp_path, capsys):
    path = tmp_path / "sels.txt"
    path.write_text("(A: x)( B :y )\n((A: x)\n")
    code, out, err = run(capsys, "sel", "parse", path)
    assert code == 1
    assert out.strip() == "((A: x)(B: y))"
    assert "line 2: byte 0" in err


def test_lint_against_a_schema(tmp_path, capsys):
    path = tmp_path / "sels.txt"
    path.write_text("((LOC: x(Located_In: y)))\n((PER: z))\n")
    code, out, err = run(capsys, "sel", "lint", path, "--spots", "LOC", "--assos", "Located_In")
    assert code == 1
    assert "lint: 1/2 ok" in out and "UnknownSpot PER" in err


def test_ssi_build(capsys):
    code, out, _ = run(capsys, "ssi", "build", "--spots", "LOC", "--assos", "Located_In")
    assert (code, out.strip()) == (0, "[spot] LOC [asso] Located_In [text]")
    code, _, err = run(capsys, "ssi", "build")
    assert code == 1 and "schema" in err


def test_score_gold_against_itself(corpus, capsys):
    for task in ("ner", "rte", "evt-trg", "evt-arg", "senti"):
        code, out, _ = run(capsys, "score", "--gold", corpus, "--pred", corpus, "--task", task)
        assert code == 0
        assert "f1 = 1.0000" in out.splitlines()[0]


def test_score_json_with_one_bucket(corpus, tmp_path, capsys):
    pred = tmp_path / "pred.jsonl"
    lines = corpus.read_text().splitlines()
    # blank every third prediction
    out_lines = []
    for k, line in enumerate(lines):
        obj = json.loads(line)
        if k % 3 == 0:
            obj["sel"] = "()"
        out_lines.append(json.dumps({"id": obj["id"], "sel": obj["sel"]}))
    pred.write_text("\n".join(out_lines) + "\n")
    code, out, _ = run(
        capsys, "--json", "score", "--gold", corpus, "--pred", pred, "--task", "ner", "--group-by-entities", "--buckets", ""
    )
    assert code == 0
    report = json.loads(out)
    assert report["groups"] == {"all": report["overall"]}
    assert 0 < report["overall"]["f1"] < 1


def test_usage_errors_exit_2(corpus, tmp_path, capsys):
    assert run(capsys, "sel", "explode", corpus)[0] == 2
    assert run(capsys, "synth", "gen", "--n", "3")[0] == 2
    assert run(capsys, "synth", "gen", "--n", "3", "--out", tmp_path / "x", "--bogus")[0] == 2
    assert run(capsys, "--threads", "0", "gradcheck")[0] == 2
    code, _, err = run(capsys, "sel", "roundtrip", tmp_path / "missing.jsonl")
    assert code == 2 and "not found" in err
    assert run(capsys, "sel", "roundtrip", tmp_path / "missing.txt")[0] == 2


def test_seed_precedence(tmp_path, capsys, monkeypatch):
    def corpus_with(*extra):
        out = tmp_path / "c.jsonl"
        assert main(["synth", "gen", "--n", "5", "--out", str(out), *extra]) == 0
        return out.read_bytes()

    two = corpus_with("--seed", "2")
    assert corpus_with("--seed", "1") != two
    assert corpus_with("--seed", "2") == two
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("seed = 2\n")
    assert corpus_with("--config", str(cfg)) == two
    monkeypatch.setenv("URTF_SEED", "2")
    assert corpus_with("--seed", "1") == two
    monkeypatch.setenv("URTF_SEED", "two")
    assert main(["synth", "gen", "--n", "5", "--out", str(tmp_path / "d.jsonl")]) == 2
    capsys.readouterr()


def test_pair_train_and_eval(corpus, tmp_path, capsys):
    tasks, report = tmp_path / "tasks.jsonl", tmp_path / "report.json"
    code, out, _ = run(capsys, "pair", "--in", corpus, "--out", tasks, "--report", report)
    assert code == 0 and "pairs" in out
    assert json.loads(report.read_text())["read_passes"] == 2

    cfg = tmp_path / "meta.cfg"
    cfg.write_text("alpha = 0.5\nbeta = 0.05\nmax_steps = 3\nd = 8\n")
    ckpt, log = tmp_path / "model.ckpt", tmp_path / "log.jsonl"
    code, out, _ = run(
        capsys, "meta", "train", "--tasks", tasks, "--config", cfg, "--mode", "first_order", "--out", ckpt, "--log", log
    )
    assert code == 0 and "3 steps in mode first_order" in out
    assert len(log.read_text().splitlines()) == 3

    code, out, _ = run(capsys, "--json", "meta", "eval", "--ckpt", ckpt, "--tasks", tasks, "--steps", "2", "--config", cfg)
    assert code == 0
    curve = json.loads(out)
    assert len(curve["mean"]) == 3 and curve["n_tasks"] > 0
    again = run(capsys, "--json", "meta", "eval", "--ckpt", ckpt, "--tasks", tasks, "--steps", "2", "--config", cfg)[1]
    assert again == out


def test_bench_reports_both_durations(capsys):
    code, out, _ = run(capsys, "--json", "bench", "pair", "--n", "300")
    assert code == 0
    payload = json.loads(out)
    assert payload["pairing_s"] > 0 and payload["episodic_s"] > 0
    assert payload["pairing"]["read_passes"] == 2


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and "FAIL" not in out
    code, out, _ = run(capsys, "gradcheck", "--tolerance", "1e-30")
    assert code == 1 and "FAIL" in out


def test_console_entry_point(corpus):
    done = subprocess.run(
        [sys.executable, "-m", "urtf", "--json", "sel", "roundtrip", str(corpus)], capture_output=True, text=True
    )
    assert done.returncode == 0
    assert json.loads(done.stdout) == {"action": "roundtrip", "total": 80, "failures": 0}
    assert done.stderr == ""
