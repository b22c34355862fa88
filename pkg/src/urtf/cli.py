"""Command-line interface: ``urtf <command> ...``.

Exit codes: 0 success, 1 a check or validation failed, 2 bad usage.
Results go to standard output (human-readable, or JSON with ``--json``);
diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .prompting import build_ssi
from .sel import Schema, SelError, SelRecord, linearize_sel, parse_sel, validate_record

log = logging.getLogger("urtf")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Output helpers


class Out:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def result(self, human: str, payload: dict) -> None:
        if self.as_json:
            print(json.dumps(payload, sort_keys=True))
        else:
            print(human)


def _diag(message: str) -> None:
    print(message, file=sys.stderr)


# --------------------------------------------------------------------------
# sel


def _sel_items(path: str) -> Iterator[tuple[str, str, Schema | None]]:
    """``(where, sel, schema)`` from a corpus (``.jsonl``) or one SEL per line."""
    from .synth import read_corpus

    if path.endswith(".jsonl"):
        for inst in read_corpus(path):
            yield f"instance {inst.id}", inst.sel, inst.schema
        return
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.strip():
                yield f"line {lineno}", line, None


def cmd_sel(args, out: Out) -> int:
    schema = None
    if args.spots or args.assos:
        schema = Schema(frozenset(args.spots or ()), frozenset(args.assos or ()))
    failures = 0
    total = 0
    canonical = []
    for where, text, own_schema in _sel_items(args.file):
        total += 1
        try:
            record = parse_sel(text)
        except SelError as exc:
            failures += 1
            _diag(f"{where}: byte {exc.position}: {exc}")
            continue
        if args.action == "parse":
            canonical.append(linearize_sel(record))
        elif args.action == "lint":
            against = schema or own_schema
            problems = [f"{type(v).__name__} {v.name}" for v in validate_record(record, against)] if against else []
            if problems:
                failures += 1
                _diag(f"{where}: {', '.join(problems)}")
        else:  # roundtrip
            again = parse_sel(linearize_sel(record))
            if again != record:
                failures += 1
                _diag(f"{where}: record changed after linearize and parse")
            elif own_schema is not None and linearize_sel(record) != text:
                failures += 1
                _diag(f"{where}: stored SEL is not canonical")
    payload = {"action": args.action, "total": total, "failures": failures}
    if args.action == "parse":
        payload["canonical"] = canonical
        human = "\n".join(canonical)
    else:
        human = f"{args.action}: {total - failures}/{total} ok"
    out.result(human, payload)
    return EXIT_FAIL if failures else EXIT_OK


# --------------------------------------------------------------------------
# ssi, synth


def cmd_ssi(args, out: Out) -> int:
    schema = Schema(frozenset(args.spots or ()), frozenset(args.assos or ()))
    rng = np.random.default_rng(args.seed)
    try:
        ssi = build_ssi(schema, args.ordering, rng)
    except ValueError as exc:
        _diag(str(exc))
        return EXIT_FAIL
    out.result(str(ssi), {"ssi": list(ssi.tokens)})
    return EXIT_OK


def cmd_synth(args, out: Out) -> int:
    from .synth import SynthConfig, gen_corpus, gen_distribution, write_corpus

    config = SynthConfig(name_prefix=args.name_prefix)
    dist = gen_distribution(config, seed=args.seed)
    n = write_corpus(
        gen_corpus(dist, args.n, seed=args.seed, max_spots=args.max_spots, max_assos=args.max_assos),
        args.out,
    )
    out.result(f"wrote {n} instances to {args.out}", {"instances": n, "out": args.out})
    return EXIT_OK


# --------------------------------------------------------------------------
# pair, bench


def cmd_pair(args, out: Out) -> int:
    from .experiments import warm_up
    from .pairing import PairingConfig, pair_corpus

    warm_up()
    report = pair_corpus(args.input, args.out, PairingConfig(args.exact_threshold, args.threads))
    payload = report.to_json()
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    out.result(
        f"{report.pairs} pairs and {report.self_pairs} self-pairs from {report.instances} instances "
        f"({report.classes} classes, {report.skipped} skipped) in {report.wall_time_ms / 1000:.2f}s",
        payload,
    )
    return EXIT_OK


def cmd_bench(args, out: Out) -> int:
    from .experiments import bench_pairing
    from .pairing import PairingConfig

    result = bench_pairing(args.n, seed=args.seed, config=PairingConfig(args.exact_threshold, args.threads))
    payload = result.to_json()
    out.result(
        f"pairing pipeline: {payload['pairing_s']:.2f}s\n"
        f"episodic sampler: {payload['episodic_s']:.2f}s\n"
        f"ratio: {payload['ratio']:.3f}",
        payload,
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# meta


def _meta_config(args, **overrides):
    from .metatrain import MetaConfig, parse_config_text

    values: dict = {}
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    values["seed"] = args.seed
    values["threads"] = args.threads
    return MetaConfig.from_mapping(values)


def cmd_meta(args, out: Out) -> int:
    from .metatrain import (
        evaluate_fast_adaptation,
        init_model,
        load_checkpoint,
        meta_pretrain,
        save_checkpoint,
        vocab_for_tasks,
    )
    from .synth import read_tasks

    tasks = list(read_tasks(args.tasks))
    if not tasks:
        _diag(f"{args.tasks}: no tasks")
        return EXIT_FAIL
    if args.action == "train":
        cfg = _meta_config(args, mode=args.mode)
        extra = [list(read_tasks(p)) for p in args.extra_vocab or ()]
        model = init_model(vocab_for_tasks(tasks, *extra), d=cfg.d, max_pos=cfg.max_pos, seed=cfg.seed)
        model, history = meta_pretrain(model, tasks, cfg, log_path=args.log)
        save_checkpoint(model, args.out)
        last = history[-1] if history else {}
        out.result(
            f"{len(history)} steps in mode {cfg.mode}; last losses "
            + ", ".join(f"{k}={last.get(k, float('nan')):.4f}" for k in ("retrv", "ext", "lm", "record"))
            + f"; checkpoint {args.out}",
            {"steps": len(history), "mode": cfg.mode, "last": last, "checkpoint": args.out},
        )
        return EXIT_OK

    cfg = _meta_config(args)
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    model = load_checkpoint(args.ckpt)
    curve = evaluate_fast_adaptation(model, tasks, args.steps, alpha, cfg, seed=args.seed)
    out.result(
        "\n".join(f"step {k}: {v:.6f}" for k, v in enumerate(curve.mean)),
        curve.as_dict(),
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# score


def _records_by_id(path: str, need_text: bool) -> dict[str, tuple[SelRecord, str]]:
    out: dict[str, tuple[SelRecord, str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ident, sel = str(obj["id"]), obj["sel"]
                text = obj["text"] if need_text else obj.get("text", "")
            except (ValueError, KeyError, TypeError) as exc:
                raise UsageError(f"{path}: line {lineno}: {exc}") from exc
            try:
                record = parse_sel(sel)
            except SelError as exc:
                if need_text:
                    raise UsageError(f"{path}: line {lineno}: gold SEL does not parse: {exc}") from exc
                _diag(f"{path}: line {lineno}: prediction does not parse ({exc}); scoring as empty")
                record = SelRecord(())
            out[ident] = (record, text)
    return out


def cmd_score(args, out: Out) -> int:
    from .metrics import PrfScore, bucket_names, entity_buckets, score_grouped, score_instance

    gold = _records_by_id(args.gold, need_text=True)
    pred = _records_by_id(args.pred, need_text=False)
    for ident in sorted(set(pred) - set(gold)):
        _diag(f"prediction {ident} has no gold instance; ignored")
    total = PrfScore(0, 0, 0)
    rows = []
    for ident, (g, text) in gold.items():
        p = pred.get(ident, (SelRecord(()), ""))[0]
        rows.append((g, p, text))
        total = total + score_instance(g, p, text, args.task)
    payload = {"task": args.task, "overall": total.as_dict()}
    lines = [f"{args.task}: precision = {total.precision:.4f} recall = {total.recall:.4f} f1 = {total.f1:.4f}"]
    if args.group_by_entities:
        edges = [int(x) for x in args.buckets.split(",")] if args.buckets else []
        groups = score_grouped(rows, args.task, entity_buckets(edges), bucket_names(edges))
        payload["groups"] = {k: v.as_dict() for k, v in groups.items()}
        for k, v in groups.items():
            lines.append(f"  entities {k}: f1 = {v.f1:.4f} (tp={v.tp} fp={v.fp} fn={v.fn})")
    out.result("\n".join(lines), payload)
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args, out: Out) -> int:
    from .checks import run_suite

    results = run_suite(args.epsilon, args.tolerance, args.seed)
    failed = [r for r in results if not r.passed]
    lines = [f"{'ok  ' if r.passed else 'FAIL'} {r.name}: {r.error:.3e} (< {r.tolerance:g})" for r in results]
    out.result(
        "\n".join(lines),
        {"checks": [{"name": r.name, "error": r.error, "passed": r.passed} for r in results]},
    )
    return EXIT_FAIL if failed else EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand from resetting a value given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (URTF_SEED overrides)")
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="JSON output")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="urtf", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    sel = sub.add_parser("sel", parents=[common], help="parse, lint or round-trip SEL strings")
    sel.add_argument("action", choices=["parse", "lint", "roundtrip"])
    sel.add_argument("file", help="one SEL string per line, or a .jsonl corpus")
    sel.add_argument("--spots", nargs="*", help="schema for lint (default: each instance's own)")
    sel.add_argument("--assos", nargs="*", help="association names for lint")
    sel.set_defaults(func=cmd_sel)

    ssi = sub.add_parser("ssi", parents=[common], help="schema prompts")
    ssi.add_argument("action", choices=["build"])
    ssi.add_argument("--spots", nargs="*", default=[], help="spot names")
    ssi.add_argument("--assos", nargs="*", default=[], help="association names")
    ssi.add_argument("--ordering", choices=["lexicographic", "shuffle"], default="lexicographic")
    ssi.set_defaults(func=cmd_ssi)

    synth = sub.add_parser("synth", parents=[common], help="synthetic corpora")
    synth.add_argument("action", choices=["gen"])
    synth.add_argument("--n", type=_non_negative_int, required=True, help="number of instances")
    synth.add_argument("--out", required=True, help="output JSONL corpus")
    synth.add_argument("--max-spots", type=_positive_int, default=3, help="spot groups per instance, at most")
    synth.add_argument("--max-assos", type=_non_negative_int, default=2, help="associations per instance, at most")
    synth.add_argument("--name-prefix", default="", help="prefix for class names, for disjoint held-out schemas")
    synth.set_defaults(func=cmd_synth)

    pair = sub.add_parser("pair", parents=[common], help="pair a corpus into support/query tasks")
    pair.add_argument("--in", dest="input", required=True, help="input JSONL corpus")
    pair.add_argument("--out", required=True, help="output JSONL task file")
    pair.add_argument("--report", help="write the run report as JSON")
    pair.add_argument("--exact-threshold", type=_non_negative_int, default=200, help="largest class matched exactly")
    pair.set_defaults(func=cmd_pair)

    bench = sub.add_parser("bench", parents=[common], help="timing benchmarks")
    bench.add_argument("action", choices=["pair"])
    bench.add_argument("--n", type=_positive_int, default=10000, help="synthetic corpus size")
    bench.add_argument("--exact-threshold", type=_non_negative_int, default=200, help="largest class matched exactly")
    bench.set_defaults(func=cmd_bench)

    meta = sub.add_parser("meta", parents=[common], help="meta-pretraining")
    meta_sub = meta.add_subparsers(dest="action", required=True)
    train = meta_sub.add_parser("train", parents=[common], help="meta-pretrain on a task file")
    train.add_argument("--tasks", required=True, help="JSONL task file from pair")
    train.add_argument("--mode", choices=["second_order", "first_order", "simple"], help="overrides the config file")
    train.add_argument("--out", required=True, help="checkpoint path")
    train.add_argument("--log", help="per-step metrics (JSONL)")
    train.add_argument("--extra-vocab", action="append", help="task file whose tokens join the vocabulary")
    train.set_defaults(func=cmd_meta)
    ev = meta_sub.add_parser("eval", parents=[common], help="query loss after 0..steps inner steps")
    ev.add_argument("--ckpt", required=True, help="checkpoint from meta train")
    ev.add_argument("--tasks", required=True, help="held-out JSONL task file")
    ev.add_argument("--steps", type=_non_negative_int, default=1, help="inner steps to evaluate")
    ev.add_argument("--alpha", type=float, help="inner step size (default: from config)")
    ev.set_defaults(func=cmd_meta)

    score = sub.add_parser("score", parents=[common], help="micro-F1 of predictions")
    score.add_argument("--gold", required=True, help="gold JSONL corpus")
    score.add_argument("--pred", required=True, help="JSONL lines with id and sel")
    score.add_argument("--task", required=True, choices=["ner", "rte", "evt-trg", "evt-arg", "senti"])
    score.add_argument("--group-by-entities", action="store_true", help="also report by gold entity count")
    score.add_argument("--buckets", default="1,2,3,4", help="bucket edges, comma separated; empty for one bucket")
    score.set_defaults(func=cmd_score)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks")
    gc.add_argument("--epsilon", type=_positive_float, default=1e-5, help="finite-difference step")
    gc.add_argument("--tolerance", type=_positive_float, default=1e-3, help="max relative error")
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def _finish_globals(args, parser: argparse.ArgumentParser) -> None:
    """Fill global options: flag, else config file, else default.

    ``URTF_SEED`` beats all of them.
    """
    given = {k for k in ("seed", "threads", "config", "json", "verbose") if hasattr(args, k)}
    defaults = {"seed": 0, "threads": os.cpu_count() or 1, "config": None, "json": False, "verbose": False}
    for key, value in defaults.items():
        if key not in given:
            setattr(args, key, value)
    if args.config:
        from .metatrain import parse_config_text

        try:
            values = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
            for key in ("seed", "threads"):
                if key in values and key not in given:
                    setattr(args, key, int(values[key]))
        except (OSError, ValueError) as exc:
            parser.error(f"config {args.config}: {exc}")
    env_seed = os.environ.get("URTF_SEED")
    if env_seed is not None:
        try:
            args.seed = int(env_seed)
        except ValueError:
            parser.error(f"URTF_SEED must be an integer, got {env_seed!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _finish_globals(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args, Out(args.json))
    except UsageError as exc:
        _diag(str(exc))
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, SelError) as exc:
        # readers wrap OS errors; a missing input is still a usage mistake
        missing = next((e for e in (exc, exc.__cause__) if isinstance(e, FileNotFoundError)), None)
        if missing is not None:
            _diag(f"file not found: {missing.filename}")
            return EXIT_USAGE
        _diag(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
