"""Meta-pretraining of a toy extraction model on paired support/query tasks.

The model is deliberately tiny so every update can be differentiated twice
by :mod:`urtf.autodiff`:

    logits_t = [mean(E[x]) ; E[y_{t-1}] + P[t]] @ W + b

where ``E`` is the token embedding table, ``P`` a learned position table
and ``x`` the input tokens. Targets are teacher-forced and end with
``<eos>``; the previous token at ``t = 0`` is ``<bos>``.

One outer step on a task:

1. adapt a copy of the parameters on the support half
   (retrieval loss + extraction loss, ``inner_steps`` SGD steps of size
   ``alpha``),
2. score the query half with the adapted parameters, and add the
   denoising (LM) and record losses at the original parameters,
3. move the original parameters by ``-beta`` times the gradient of that
   total, taken through the adaptation when ``mode == "second_order"``.

``mode == "first_order"`` treats the adaptation step as a constant shift
and ``mode == "simple"`` skips it.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, constant, grad, no_record
from .prompting import (
    DEFAULT_CORRUPTION_RATE,
    DEFAULT_MEAN_SPAN,
    DEFAULT_N_ASSO,
    DEFAULT_N_SPOT,
    MARKERS,
    SENTINELS,
    SsiPrompt,
    assemble_extraction_input,
    assemble_retrieval_input,
    build_ssi,
    corrupt_text,
    sample_schema_negatives,
)
from .sel import Schema, SelError, SelRecord, join_sel_tokens, parse_sel, tokenize_sel
from .synth import Instance, PairedTask

log = logging.getLogger(__name__)

BOS = "<bos>"
EOS = "<eos>"
STRUCTURE = ("(", ")", ":")
MODES = ("second_order", "first_order", "simple")
NEGATIVE_POLICIES = ("resample", "fixed")
LOSS_NAMES = ("retrv", "ext", "lm", "record")
MAGIC = b"URTF1"


class UnknownToken(KeyError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# Vocabulary


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate vocabulary tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise UnknownToken(token) from None

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def bos(self) -> int:
        return self._index[BOS]

    @property
    def eos(self) -> int:
        return self._index[EOS]

    @classmethod
    def build(cls, words: Iterable[str]) -> "Vocab":
        """Fixed tokens (specials, SEL structure, markers, sentinels) first,
        then ``words`` sorted."""
        fixed = (BOS, EOS) + STRUCTURE + MARKERS + SENTINELS
        extra = sorted(set(words) - set(fixed))
        return cls(fixed + tuple(extra))


def instance_words(inst: Instance) -> set[str]:
    words = set(inst.text.split())
    words.update(tokenize_sel(inst.sel))
    words.update(inst.schema.spots)
    words.update(inst.schema.assos)
    return words


def vocab_for_tasks(*task_lists: Iterable[PairedTask]) -> Vocab:
    words: set[str] = set()
    for tasks in task_lists:
        for t in tasks:
            words |= instance_words(t.support) | instance_words(t.query)
    return Vocab.build(words)


# --------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class ToyModel:
    """Parameters plus the vocabulary they are indexed by.

    Parameter names: ``embedding`` (V x d), ``position`` (max_pos x d),
    ``decoder_weights`` (2d x V) and ``decoder_bias`` (1 x V).
    """

    vocab: Vocab
    params: ParamStore
    d: int
    max_pos: int

    def __post_init__(self):
        v, d = len(self.vocab), self.d
        expected = {
            "embedding": (v, d),
            "position": (self.max_pos, d),
            "decoder_weights": (2 * d, v),
            "decoder_bias": (1, v),
        }
        got = {k: self.params[k].shape for k in self.params}
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match {expected}")

    def with_params(self, params: ParamStore) -> "ToyModel":
        return replace(self, params=params)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.params.arrays().values())


def init_model(
    vocab: Vocab, d: int = 32, max_pos: int = 64, seed: int = 0, decoder_scale: float = 0.01
) -> ToyModel:
    """Random embeddings, near-zero decoder.

    With ``decoder_scale=0`` the output distribution is exactly uniform.
    """
    if d < 1 or max_pos < 1:
        raise ValueError("d and max_pos must be >= 1")
    rng = np.random.default_rng(seed)
    v = len(vocab)
    arrays = {
        "embedding": rng.normal(0.0, 1.0 / math.sqrt(d), (v, d)),
        "position": rng.normal(0.0, 1.0 / math.sqrt(d), (max_pos, d)),
        "decoder_weights": rng.normal(0.0, decoder_scale, (2 * d, v)) if decoder_scale else np.zeros((2 * d, v)),
        "decoder_bias": np.zeros((1, v)),
    }
    return ToyModel(vocab, ParamStore.from_arrays(arrays), d, max_pos)


@dataclass(frozen=True)
class Example:
    """Encoded (input, target) pair.

    ``y`` already ends with EOS and ``prev`` is ``y`` shifted right by one
    behind BOS (the teacher-forced decoder inputs).
    """

    x: np.ndarray
    y: np.ndarray
    prev: np.ndarray


def make_example(vocab: Vocab, inputs: Sequence[str], target: Sequence[str]) -> Example:
    if len(target) == 0:
        raise ValueError("target must be nonempty")
    if len(inputs) == 0:
        raise ValueError("input must be nonempty")
    y = np.append(vocab.encode(target), vocab.eos)
    return Example(vocab.encode(inputs), y, np.concatenate([[vocab.bos], y[:-1]]))


def sequence_loss(params: Mapping[str, Tensor], ex: Example, max_pos: int) -> Tensor:
    """Teacher-forced mean cross-entropy of ``ex.y`` given ``ex.x``."""
    t, n = len(ex.y), len(ex.x)
    emb = params["embedding"]
    # one matmul both averages the input embeddings and repeats them per step
    context = ad.matmul(constant(np.full((t, n), 1.0 / n)), ad.embedding_lookup(emb, ex.x))
    pos = np.minimum(np.arange(t), max_pos - 1)
    step = ad.add(ad.embedding_lookup(emb, ex.prev), ad.embedding_lookup(params["position"], pos))
    hidden = ad.concat_cols(context, step)
    logits = ad.add(
        ad.matmul(hidden, params["decoder_weights"]),
        ad.matmul(constant(np.ones((t, 1))), params["decoder_bias"]),
    )
    return ad.cross_entropy(logits, ex.y)


def forward_loss(model: ToyModel, inputs, target: Sequence[str]) -> Tensor:
    """Loss of generating ``target`` from a :class:`ModelInput` or token list."""
    tokens = getattr(inputs, "tokens", inputs)
    return sequence_loss(model.params, make_example(model.vocab, tokens, target), model.max_pos)


# --------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 1e-4
    beta: float = 1e-4
    inner_steps: int = 1
    mode: str = "second_order"
    w_retrv: float = 1.0
    w_ext: float = 1.0
    w_lm: float = 1.0
    w_record: float = 1.0
    batch_size: int = 4
    epochs: int = 1
    max_steps: int = 0  # 0: run whole epochs
    n_spot_neg: int = DEFAULT_N_SPOT
    n_asso_neg: int = DEFAULT_N_ASSO
    corruption_rate: float = DEFAULT_CORRUPTION_RATE
    mean_span: float = DEFAULT_MEAN_SPAN
    d: int = 32
    max_pos: int = 64
    threads: int = 1
    seed: int = 0
    negatives: str = "resample"  # or "fixed": same negatives at every visit

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError("need alpha >= 0 and beta > 0")
        if self.mode != "simple" and self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1 unless mode is simple")
        if self.batch_size < 1 or self.epochs < 0 or self.max_steps < 0 or self.threads < 1:
            raise ValueError("batch_size and threads must be >= 1; epochs, max_steps >= 0")
        if min(self.weights.values()) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.negatives not in NEGATIVE_POLICIES:
            raise ValueError(f"negatives must be one of {NEGATIVE_POLICIES}, got {self.negatives!r}")

    @property
    def weights(self) -> dict[str, float]:
        return {"retrv": self.w_retrv, "ext": self.w_ext, "lm": self.w_lm, "record": self.w_record}

    @classmethod
    def from_mapping(cls, values: Mapping[str, str | float | int]) -> "MetaConfig":
        """Build from string values (as read from a config file)."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kind = types[key]
            if kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"config line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path, **overrides) -> MetaConfig:
    values: dict = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return MetaConfig.from_mapping(values)


# --------------------------------------------------------------------------
# Task encoding


@dataclass(frozen=True)
class HalfExamples:
    retrv: Example
    ext: Example


@dataclass(frozen=True)
class EncodedTask:
    support: HalfExamples
    query: HalfExamples
    lm: Example
    record: Example


def encode_half(
    inst: Instance, vocab: Vocab, pool: Schema, cfg: MetaConfig, rng: np.random.Generator
) -> HalfExamples:
    if cfg.negatives == "fixed":
        rng = np.random.default_rng((cfg.seed, zlib.crc32(inst.id.encode("utf-8"))))
    schema = sample_schema_negatives(inst.schema, pool, cfg.n_spot_neg, cfg.n_asso_neg, rng)
    ssi = build_ssi(schema)
    text = inst.tokens
    target = tokenize_sel(inst.sel)
    return HalfExamples(
        make_example(vocab, assemble_retrieval_input(ssi, text).tokens, target),
        # the knowledge fed to the extraction pass is the gold record
        make_example(vocab, assemble_extraction_input(ssi, text, inst.record).tokens, target),
    )


def encode_task(
    task: PairedTask, vocab: Vocab, pool: Schema, cfg: MetaConfig, rng: np.random.Generator
) -> EncodedTask:
    query = task.query
    corrupted = corrupt_text(query.tokens, cfg.corruption_rate, cfg.mean_span, rng)
    lm_target = corrupted.target or tuple(query.tokens)
    return EncodedTask(
        encode_half(task.support, vocab, pool, cfg, rng),
        encode_half(query, vocab, pool, cfg, rng),
        make_example(vocab, corrupted.corrupted_input, lm_target),
        make_example(vocab, query.tokens, tokenize_sel(query.sel)),
    )


def task_pool(tasks: Iterable[PairedTask]) -> Schema:
    spots: set[str] = set()
    assos: set[str] = set()
    for t in tasks:
        for inst in (t.support, t.query):
            spots |= inst.schema.spots
            assos |= inst.schema.assos
    return Schema(frozenset(spots), frozenset(assos))


# --------------------------------------------------------------------------
# Losses and updates


@dataclass(frozen=True)
class LossBundle:
    retrv: float
    ext: float
    lm: float
    record: float

    @property
    def total(self) -> float:
        return self.retrv + self.ext + self.lm + self.record

    def as_dict(self) -> dict:
        return {"retrv": self.retrv, "ext": self.ext, "lm": self.lm, "record": self.record}

    @staticmethod
    def mean(bundles: Sequence["LossBundle"]) -> "LossBundle":
        n = len(bundles)
        return LossBundle(*(sum(getattr(b, k) for b in bundles) / n for k in LOSS_NAMES))


def _check_finite(name: str, value: Tensor, context: str = "") -> None:
    if not np.isfinite(value.data).all():
        raise NonFiniteLoss(f"{name} loss is {value.item()}{' (' + context + ')' if context else ''}")


def half_loss(params, half: HalfExamples, cfg: MetaConfig, max_pos: int) -> tuple[Tensor, Tensor, Tensor]:
    """Weighted retrieval + extraction loss of one half, and both parts."""
    retrv = sequence_loss(params, half.retrv, max_pos)
    ext = sequence_loss(params, half.ext, max_pos)
    w = cfg.weights
    return ad.add(ad.scale(retrv, w["retrv"]), ad.scale(ext, w["ext"])), retrv, ext


def adapt_params(
    params: ParamStore,
    inner_loss: Callable[[ParamStore], Tensor],
    alpha: float,
    steps: int,
    higher_order: bool,
) -> ParamStore:
    """``steps`` SGD steps on ``inner_loss``; recorded when ``higher_order``."""
    for _ in range(steps):
        loss = inner_loss(params)
        _check_finite("inner", loss)
        grads = grad(loss, params, higher_order=higher_order)
        params = params.sgd(grads, alpha)
    return params


def maml_objective(
    params: ParamStore,
    inner_loss: Callable[[ParamStore], Tensor],
    query_loss: Callable[[ParamStore], Tensor],
    cfg: MetaConfig,
    base_loss: Callable[[ParamStore], Tensor] | None = None,
) -> Tensor:
    """``query_loss(adapted) + base_loss(params)`` as a recorded scalar.

    ``adapted`` comes from :func:`adapt_params` on ``inner_loss``; the mode
    decides whether later gradients flow through the adaptation.
    """
    if cfg.mode == "simple":
        adapted = params
    else:
        adapted = adapt_params(
            params, inner_loss, cfg.alpha, cfg.inner_steps, higher_order=cfg.mode == "second_order"
        )
    total = query_loss(adapted)
    if base_loss is not None:
        total = ad.add(total, base_loss(params))
    _check_finite("outer", total)
    return total


def maml_gradient(params, inner_loss, query_loss, cfg: MetaConfig, base_loss=None):
    """Gradient of :func:`maml_objective` wrt ``params``, and the objective."""
    total = maml_objective(params, inner_loss, query_loss, cfg, base_loss)
    return grad(total, params), total


def outer_loss(
    params: ParamStore, enc: EncodedTask, cfg: MetaConfig, max_pos: int
) -> tuple[Tensor, dict[str, Tensor]]:
    """Full outer objective of one encoded task, and its four parts."""
    parts: dict[str, Tensor] = {}
    w = cfg.weights

    def inner(p):
        return half_loss(p, enc.support, cfg, max_pos)[0]

    def query(p):
        total, parts["retrv"], parts["ext"] = half_loss(p, enc.query, cfg, max_pos)
        return total

    def base(p):
        parts["lm"] = sequence_loss(p, enc.lm, max_pos)
        parts["record"] = sequence_loss(p, enc.record, max_pos)
        return ad.add(ad.scale(parts["lm"], w["lm"]), ad.scale(parts["record"], w["record"]))

    total = maml_objective(params, inner, query, cfg, base)
    for name, value in parts.items():
        _check_finite(name, value)
    return total, parts


def inner_adapt(model: ToyModel, support: Instance, cfg: MetaConfig, pool: Schema | None = None,
                rng: np.random.Generator | None = None) -> ToyModel:
    """Adapted copy of ``model`` after ``cfg.inner_steps`` steps on ``support``."""
    if cfg.mode == "simple":
        raise ValueError("mode simple has no inner loop")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pool = pool if pool is not None else support.schema
    half = encode_half(support, model.vocab, pool, cfg, rng)
    adapted = adapt_params(
        model.params.detached(),
        lambda p: half_loss(p, half, cfg, model.max_pos)[0],
        cfg.alpha,
        cfg.inner_steps,
        higher_order=False,
    )
    return model.with_params(ParamStore.from_arrays(adapted.arrays()))


def _task_gradient(model: ToyModel, enc: EncodedTask, cfg: MetaConfig, params: ParamStore):
    total, parts = outer_loss(params, enc, cfg, model.max_pos)
    return grad(total, params), LossBundle(*(parts[k].item() for k in LOSS_NAMES))


def outer_step_encoded(
    model: ToyModel, batch: Sequence[EncodedTask], cfg: MetaConfig
) -> tuple[ToyModel, LossBundle]:
    """One meta-update from a batch of encoded tasks (gradients summed)."""
    if not batch:
        raise ValueError("empty task batch")
    params = model.params.detached()

    def run(enc):
        return _task_gradient(model, enc, cfg, params)

    if cfg.threads > 1 and len(batch) > 1:
        with ThreadPoolExecutor(min(cfg.threads, len(batch))) as pool:
            results = list(pool.map(run, batch))
    else:
        results = [run(enc) for enc in batch]
    # reduce in batch order so the result does not depend on scheduling
    total = {k: np.zeros(v.shape) for k, v in params.items()}
    for grads, _ in results:
        for k in total:
            total[k] += grads[k].data
    new = {k: params[k].data - cfg.beta * total[k] for k in total}
    return model.with_params(ParamStore.from_arrays(new)), LossBundle.mean([b for _, b in results])


def outer_step(
    model: ToyModel,
    task: PairedTask | Sequence[PairedTask],
    cfg: MetaConfig,
    pool: Schema | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[ToyModel, LossBundle]:
    """Meta-update on one task (or a batch); ``model`` is left untouched."""
    tasks = [task] if isinstance(task, PairedTask) else list(task)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pool = pool if pool is not None else task_pool(tasks)
    batch = [encode_task(t, model.vocab, pool, cfg, rng) for t in tasks]
    return outer_step_encoded(model, batch, cfg)


def fit_examples(
    model: ToyModel, examples: Sequence[Example], lr: float, steps: int
) -> tuple[ToyModel, list[float]]:
    """Plain full-batch SGD on the summed loss of ``examples``.

    Returns the fitted model and the loss before each step.
    """
    if not examples:
        raise ValueError("no examples to fit")
    params = model.params.detached()
    losses = []
    for _ in range(steps):
        total = sequence_loss(params, examples[0], model.max_pos)
        for ex in examples[1:]:
            total = ad.add(total, sequence_loss(params, ex, model.max_pos))
        _check_finite("supervised", total)
        losses.append(total.item())
        params = params.sgd(grad(total, params), lr).detached()
    return model.with_params(params), losses


# --------------------------------------------------------------------------
# Training loop


def meta_pretrain(
    model: ToyModel,
    tasks: Sequence[PairedTask],
    cfg: MetaConfig,
    log_path: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[ToyModel, list[dict]]:
    """Run outer steps over seeded-shuffled task batches.

    Runs ``cfg.epochs`` epochs, or exactly ``cfg.max_steps`` steps when that
    is set (cycling through further epochs as needed). Returns the trained
    model and one log entry per step.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks to train on")
    rng = np.random.default_rng(cfg.seed)
    pool = task_pool(tasks)
    history: list[dict] = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        step = 0
        epoch = 0
        while True:
            if cfg.max_steps and step >= cfg.max_steps:
                break
            if not cfg.max_steps and epoch >= cfg.epochs:
                break
            order = rng.permutation(len(tasks))
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps and step >= cfg.max_steps:
                    break
                chosen = [tasks[i] for i in order[start : start + cfg.batch_size]]
                batch = [encode_task(t, model.vocab, pool, cfg, rng) for t in chosen]
                model, losses = outer_step_encoded(model, batch, cfg)
                step += 1
                entry = {"step": step, "epoch": epoch, "mode": cfg.mode, **losses.as_dict()}
                history.append(entry)
                if fh:
                    fh.write(json.dumps(entry) + "\n")
                if on_step:
                    on_step(entry)
            epoch += 1
    finally:
        if fh:
            fh.close()
    return model, history


# --------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class AdaptationCurve:
    """Mean query loss after 0..steps inner steps, plus per-task values."""

    mean: tuple[float, ...]
    per_task: np.ndarray = field(repr=False)

    @property
    def improving_steps(self) -> list[int]:
        """Steps ``k`` whose mean loss is below that of step ``k - 1``."""
        return [k for k in range(1, len(self.mean)) if self.mean[k] < self.mean[k - 1]]

    @property
    def monotone(self) -> bool:
        return len(self.improving_steps) == len(self.mean) - 1

    def as_dict(self) -> dict:
        return {
            "mean": list(self.mean),
            "improving_steps": self.improving_steps,
            "monotone": self.monotone,
            "n_tasks": int(self.per_task.shape[0]),
        }


def evaluate_fast_adaptation(
    model: ToyModel,
    heldout: Sequence[PairedTask],
    steps: int,
    alpha: float,
    cfg: MetaConfig | None = None,
    seed: int = 0,
) -> AdaptationCurve:
    """Query loss as a task is adapted on its support half.

    The query loss is the weighted retrieval + extraction loss. Negative
    schema names are drawn from the held-out pool with a per-task seed, so
    two models evaluated with the same ``seed`` see identical inputs.
    """
    if steps < 0 or alpha < 0:
        raise ValueError("steps and alpha must be >= 0")
    cfg = cfg or MetaConfig()
    heldout = list(heldout)
    pool = task_pool(heldout)
    mp = model.max_pos
    per_task = np.zeros((len(heldout), steps + 1))
    for i, task in enumerate(heldout):
        rng = np.random.default_rng((seed, i))
        sup = encode_half(task.support, model.vocab, pool, cfg, rng)
        qry = encode_half(task.query, model.vocab, pool, cfg, rng)
        params = model.params.detached()
        for k in range(steps + 1):
            with no_record():
                per_task[i, k] = half_loss(params, qry, cfg, mp)[0].item()
            if k < steps:
                params = adapt_params(
                    params, lambda p: half_loss(p, sup, cfg, mp)[0], alpha, 1, higher_order=False
                ).detached()
    mean = per_task.mean(axis=0) if len(heldout) else np.zeros(steps + 1)
    return AdaptationCurve(tuple(float(v) for v in mean), per_task)


# --------------------------------------------------------------------------
# Inference


def greedy_decode(model: ToyModel, inputs: Sequence[str], max_len: int) -> list[str]:
    """Most likely token at each step until ``<eos>`` or ``max_len`` tokens."""
    if max_len <= 0:
        return []
    p = model.params.arrays()
    vocab = model.vocab
    emb = p["embedding"]
    context = emb[vocab.encode(inputs)].mean(axis=0)
    out: list[int] = []
    prev = vocab.bos
    for t in range(max_len):
        step = emb[prev] + p["position"][min(t, model.max_pos - 1)]
        logits = np.concatenate([context, step]) @ p["decoder_weights"] + p["decoder_bias"][0]
        nxt = int(np.argmax(logits))
        if nxt == vocab.eos:
            break
        out.append(nxt)
        prev = nxt
    return vocab.decode(out)


def _parse_or_empty(tokens: list[str], label: str, flags: list[str] | None) -> SelRecord:
    try:
        return parse_sel(join_sel_tokens(tokens))
    except SelError as exc:
        log.info("%s decode is not valid SEL (%s); using an empty record", label, exc)
        if flags is not None:
            flags.append(label)
        return SelRecord(())


def retrieve_then_extract_inference(
    model: ToyModel,
    ssi: SsiPrompt,
    text: str | Sequence[str],
    max_len: int,
    flags: list[str] | None = None,
) -> tuple[SelRecord, SelRecord]:
    """Decode knowledge from prompt + text, then the record from prompt +
    text + knowledge.

    A decode that is not valid SEL becomes an empty record, and its label
    (``"knowledge"`` or ``"prediction"``) is appended to ``flags``.
    """
    words = text.split() if isinstance(text, str) else list(text)
    if max_len <= 0:
        return SelRecord(()), SelRecord(())
    first = assemble_retrieval_input(ssi, words)
    knowledge = _parse_or_empty(greedy_decode(model, first.tokens, max_len), "knowledge", flags)
    second = assemble_extraction_input(ssi, words, knowledge)
    prediction = _parse_or_empty(greedy_decode(model, second.tokens, max_len), "prediction", flags)
    return knowledge, prediction


# --------------------------------------------------------------------------
# Checkpoints
#
# Layout: b"URTF1", u32 header length, UTF-8 JSON header (vocab, d,
# max_pos), u32 tensor count, then per tensor: u16 name length, name,
# u8 rank, u64 per dimension, little-endian float64 data.


def save_checkpoint(model: ToyModel, path: str | Path) -> None:
    header = json.dumps(
        {"vocab": list(model.vocab.tokens), "d": model.d, "max_pos": model.max_pos}
    ).encode("utf-8")
    arrays = model.params.arrays()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            a = arrays[name]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ToyModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError("not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ValueError("truncated checkpoint")
        values = struct.unpack_from(fmt, data, pos)
        pos += size
        return values

    (hlen,) = take("<I")
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<B")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(data):
            raise ValueError("truncated checkpoint")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return ToyModel(Vocab(tuple(header["vocab"])), ParamStore.from_arrays(arrays), header["d"], header["max_pos"])
