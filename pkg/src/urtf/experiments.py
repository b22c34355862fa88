"""End-to-end experiments on synthetic data: pairing timing and fast adaptation."""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .blossom import max_weight_matching_dense
from .metatrain import (
    MetaConfig,
    ToyModel,
    evaluate_fast_adaptation,
    init_model,
    meta_pretrain,
    vocab_for_tasks,
)
from .pairing import EpisodicReport, PairingConfig, PairingReport, pair_corpus, simulate_episodic
from .synth import PairedTask, SynthConfig, gen_corpus, gen_distribution, read_tasks, write_corpus


def warm_up() -> None:
    """Load (or compile, on first use) the native matcher."""
    max_weight_matching_dense(np.array([[0, 1], [1, 0]]))


@dataclass
class BenchResult:
    pairing: PairingReport
    episodic: EpisodicReport

    @property
    def ratio(self) -> float:
        return self.pairing.wall_time_ms / self.episodic.wall_time_ms

    def to_json(self) -> dict:
        return {
            "pairing_s": self.pairing.wall_time_ms / 1000,
            "episodic_s": self.episodic.wall_time_ms / 1000,
            "ratio": self.ratio,
            "pairing": self.pairing.to_json(),
            "episodic": self.episodic.to_json(),
        }


def bench_pairing(
    n: int, seed: int = 0, workdir: str | Path | None = None, config: PairingConfig = PairingConfig()
) -> BenchResult:
    """Time the two-pass pairing pipeline against the episodic sampler model
    on the same ``n``-instance synthetic corpus.

    The native matcher is warmed up first so a one-time compile is not
    billed to the pipeline.
    """
    warm_up()
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        corpus = Path(tmp) / "corpus.jsonl"
        dist = gen_distribution(SynthConfig(), seed=seed)
        write_corpus(gen_corpus(dist, n, seed=seed), corpus)
        report = pair_corpus(corpus, Path(tmp) / "tasks.jsonl", config)
        episodic = simulate_episodic(corpus, seed=seed)
    return BenchResult(report, episodic)


@dataclass(frozen=True)
class TaskSplit:
    train: list[PairedTask]
    heldout: list[PairedTask]


def synthetic_split(
    n_train: int = 2000,
    n_heldout: int = 200,
    seed: int = 0,
    n_words: int = 100,
    workdir: str | Path | None = None,
) -> TaskSplit:
    """Paired training tasks, and held-out tasks whose class names never
    occur in training. Self-paired held-out tasks are dropped."""
    train_dist = gen_distribution(SynthConfig(n_words=n_words), seed=seed + 1)
    held_dist = gen_distribution(SynthConfig(n_words=n_words, name_prefix="H"), seed=seed + 2)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        out = []
        for name, dist, n, prefix in (
            ("train", train_dist, n_train, "t"),
            ("heldout", held_dist, n_heldout, "h"),
        ):
            corpus = Path(tmp) / f"{name}.jsonl"
            tasks = Path(tmp) / f"{name}.tasks.jsonl"
            write_corpus(gen_corpus(dist, n, seed=seed + 3, prefix=prefix), corpus)
            pair_corpus(corpus, tasks)
            out.append(list(read_tasks(tasks)))
    return TaskSplit(out[0], [t for t in out[1] if not t.is_self_pair])


@dataclass
class AdaptationComparison:
    losses: dict[str, np.ndarray]  # mode -> per-task 1-step query loss
    wins: int
    n_tasks: int
    p_value: float
    seconds: dict[str, float]
    histories: dict[str, list[dict]]

    def to_json(self) -> dict:
        return {
            "mean_loss": {k: float(v.mean()) for k, v in self.losses.items()},
            "wins": self.wins,
            "n_tasks": self.n_tasks,
            "p_value": self.p_value,
            "seconds": self.seconds,
        }


def compare_modes(
    split: TaskSplit,
    cfg: MetaConfig,
    modes: tuple[str, str] = ("second_order", "simple"),
    n_heldout: int = 40,
    eval_seed: int = 7,
) -> AdaptationComparison:
    """Meta-train one model per mode from the same start, adapt each on
    held-out supports for one step and compare query losses task by task.

    ``wins`` counts tasks where the first mode ends lower; the p-value is a
    one-sided sign test.
    """
    heldout = split.heldout[:n_heldout]
    vocab = vocab_for_tasks(split.train, heldout)
    start: ToyModel = init_model(vocab, d=cfg.d, max_pos=cfg.max_pos, seed=cfg.seed)
    losses, seconds, histories = {}, {}, {}
    for mode in modes:
        mode_cfg = replace(cfg, mode=mode)
        t0 = time.perf_counter()
        model, history = meta_pretrain(start, split.train, mode_cfg)
        seconds[mode] = time.perf_counter() - t0
        curve = evaluate_fast_adaptation(model, heldout, 1, cfg.alpha, mode_cfg, seed=eval_seed)
        losses[mode] = curve.per_task[:, 1]
        histories[mode] = history
    first, second = modes
    diff = losses[second] - losses[first]
    wins = int((diff > 0).sum())
    n = int((diff != 0).sum())
    p = float(stats.binomtest(wins, n, alternative="greater").pvalue) if n else 1.0
    return AdaptationComparison(losses, wins, n, p, seconds, histories)

