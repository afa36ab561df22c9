"""``mpsum`` command-line interface.

Exit codes (stable; stderr carries ``ERROR <code>: <message>``):

    0  success
    1  selfcheck failure
    2  bad input: parse error, duplicate id, invalid config or flag, unreadable file,
       bad checkpoint
    3  training labels contain a single class
    4  evaluation dataset lacks gold summaries
    5  review has no sentences
    6  paraphrase endpoint failed or answered malformed
    7  any other library error
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import RunConfig, load_config
from .errors import (CheckpointError, ConfigError, DegenerateLabels, DuplicateId, EmptyReview,
                     MPSumError, NoGold, ParaphraseError, ParseError)
from .rouge import corpus_rouge, dumps_report, format_table
from .text import (RemoteParaphraser, identity_paraphrase, load_prepared, load_reviews,
                   preprocess, prepare_review, save_prepared, summarize, summarize_many)

log = logging.getLogger("mpsum")

EXIT_CODES = [
    (ParseError, 2), (DuplicateId, 2), (ConfigError, 2), (CheckpointError, 2),
    (DegenerateLabels, 3), (NoGold, 4), (EmptyReview, 5), (ParaphraseError, 6),
    (MPSumError, 7),
]


class UsageError(Exception):
    """Invalid flag value caught after argparse (exit 2)."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, OSError)):
        return 2
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    raise exc


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MPSUM_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MPSUM_SEED must be an integer, got {env!r}") from None


def _paraphraser(args):
    url = getattr(args, "paraphrase_url", None)
    return RemoteParaphraser(url, args.paraphrase_timeout) if url else identity_paraphrase


def _scorer(ck):
    from .training import score_sentences

    return lambda review_text, sents: score_sentences(ck, review_text, sents)


# --------------------------------------------------------------------------
# commands

def cmd_prepare(args) -> int:
    if not 0.0 <= args.tau_rouge <= 1.0:
        raise UsageError(f"--tau-rouge must be in [0, 1], got {args.tau_rouge}")
    if not -1.0 <= args.tau_sim <= 1.0:
        raise UsageError(f"--tau-sim must be in [-1, 1], got {args.tau_sim}")
    reviews = load_reviews(args.input)
    embed = None
    if args.use_sim:
        from .ssm import EncoderConfig, build_vocab, encode, init_params

        seed = _seed(args)
        seed = RunConfig().seed if seed is None else seed
        vocab = build_vocab([preprocess(r.text) for r in reviews])
        params = init_params(EncoderConfig(), len(vocab), seed)
        embed = lambda text: encode(text, vocab, params)  # noqa: E731
    prepared = [prepare_review(r, embed=embed, tau_rouge=args.tau_rouge, tau_sim=args.tau_sim,
                               use_sim=args.use_sim) for r in reviews]
    save_prepared(prepared, args.output)

    counts = Counter(s.label for p in prepared for s in p.sentences)
    print(f"reviews: {len(prepared)}")
    print(f"sentences: {sum(counts.values())}  relevant: {counts[1]}  irrelevant: {counts[0]}"
          f"  unlabeled: {counts[None]}")
    for p in prepared:
        pos = sum(1 for s in p.sentences if s.label == 1)
        print(f"  {p.review_id}: {len(p.sentences)} sentences, {pos} relevant")
    return 0


def _run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    seed = _seed(args)
    if seed is not None:
        overrides["seed"] = seed
    for key in ("epochs", "batch_size", "lr", "weight_decay", "dropout", "n_clusters",
                "trace_every"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.no_compression:
        overrides["compression"] = False
    lora = {"enabled": args.mode == "lora"}
    if args.lora_rank is not None:
        lora["rank"] = args.lora_rank
    if args.lora_epochs is not None:
        lora["epochs"] = args.lora_epochs
    overrides["lora"] = lora
    return config.merged(overrides)


def trace_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".trace.csv")


def cmd_train(args) -> int:
    from .training import train_head, train_lora

    config = _run_config(args)
    prepared = load_prepared(args.dataset)
    result = train_lora(prepared, config) if args.mode == "lora" else train_head(prepared, config)
    ckpt_io.save(result.checkpoint, args.out)
    with open(trace_path(args.out), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "epoch", "step", "loss", "accuracy"])
        for row in result.trace:
            w.writerow([row.phase, row.epoch, row.step, repr(row.loss), repr(row.accuracy)])
    last = result.trace[-1]
    print(f"wrote {args.out} ({args.mode}); final {last.phase} loss {last.loss:.4f}"
          f" accuracy {last.accuracy:.3f}")
    return 0


def _threshold_topk(args, ck):
    threshold = ck.config.threshold if args.threshold is None else args.threshold
    top_k = ck.config.top_k if args.top_k is None else args.top_k
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"--threshold must be in [0, 1], got {threshold}")
    if top_k is not None and top_k < 1:
        raise UsageError(f"--top-k must be >= 1, got {top_k}")
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    return threshold, top_k


def cmd_evaluate(args) -> int:
    ck = ckpt_io.load(args.ckpt)
    threshold, top_k = _threshold_topk(args, ck)
    prepared = load_prepared(args.dataset)
    golds = []
    for p in prepared:
        gold = preprocess(p.summary) if p.summary is not None else ""
        if not gold:
            raise NoGold(f"review {p.review_id!r} has no gold summary")
        golds.append(gold)
    results = summarize_many([[s.text for s in p.sentences] for p in prepared], _scorer(ck),
                             _paraphraser(args), threshold, top_k, args.jobs)
    report = corpus_rouge([(r.final, g) for r, g in zip(results, golds)],
                          [p.review_id for p in prepared])
    Path(args.report).write_text(dumps_report(report), encoding="utf-8")
    table = format_table(report, label=args.label)
    Path(args.report).with_suffix(".txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_summarize(args) -> int:
    ck = ckpt_io.load(args.ckpt)
    threshold, top_k = _threshold_topk(args, ck)
    if args.stdin:
        raw = sys.stdin.read()
    else:
        raw = Path(args.text).read_text(encoding="utf-8")
    result = summarize(raw, _scorer(ck), _paraphraser(args), threshold, top_k)
    if args.verbose:
        for i, (s, p) in enumerate(zip(result.sentences, result.scores)):
            mark = "*" if i in result.selected else " "
            print(f"{mark} {p:.6f}  {s}")
    print(result.final)
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    ok = run_selfcheck(inject_fault=args.inject_fault)
    print("selfcheck: " + ("all suites passed" if ok else "FAILED"))
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpsum", description="Extractive review summarization.")
    ap.add_argument("-v", "--log-level", default="WARNING",
                    choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split, preprocess and label a review JSONL file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tau-rouge", type=float, default=RunConfig.tau_rouge)
    p.add_argument("--tau-sim", type=float, default=RunConfig.tau_sim)
    p.add_argument("--use-sim", action="store_true",
                   help="also label sentences whose embedding is close to the review's")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the relevance classifier")
    p.add_argument("--dataset", required=True, help="prepared JSONL")
    p.add_argument("--mode", choices=["head", "lora"], default="head")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", help="JSON config file (defaults < file < flags)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--trace-every", type=int)
    p.add_argument("--lora-rank", type=int)
    p.add_argument("--lora-epochs", type=int)
    p.add_argument("--no-compression", action="store_true",
                   help="ablation: feed the raw pair embedding to the head")
    p.set_defaults(func=cmd_train)

    def scoring_flags(p):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--threshold", type=float)
        p.add_argument("--top-k", type=int)
        p.add_argument("--paraphrase-url")
        p.add_argument("--paraphrase-timeout", type=float, default=10.0)
        p.add_argument("--jobs", type=int, default=1, help="threads for sentence scoring")

    p = sub.add_parser("evaluate", help="summarize a labeled dataset and score with ROUGE")
    p.add_argument("--dataset", required=True, help="prepared JSONL with gold summaries")
    p.add_argument("--report", required=True, help="report JSON path (table goes to .txt)")
    p.add_argument("--label", default="model", help="row label in the table")
    scoring_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("summarize", help="summarize one review")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="file holding the raw review")
    src.add_argument("--stdin", action="store_true")
    p.add_argument("--verbose", action="store_true", help="print per-sentence probabilities")
    scoring_flags(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("selfcheck", help="run the invariant suites")
    p.add_argument("--inject-fault", action="store_true",
                   help="debug: flip the sign of the discretized input gain")
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        print(f"ERROR {code}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    raise SystemExit(main())
