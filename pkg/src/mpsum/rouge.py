"""ROUGE-1/2/L over whitespace tokens of preprocessed text (no stemming, no
stopword removal), with mean-of-F1 corpus aggregation."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

from .errors import DegenerateInput


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_cand: int, n_ref: int) -> "RougeScore":
        p = overlap / n_cand if n_cand else 0.0
        r = overlap / n_ref if n_ref else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def _tokens(x):
    return x.split() if isinstance(x, str) else list(x)


def ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n: int) -> RougeScore:
    """Clipped n-gram overlap. Accepts token lists or whitespace-split strings."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = ngrams(_tokens(candidate), n), ngrams(_tokens(reference), n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_len(a, b) -> int:
    a, b = _tokens(a), _tokens(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> RougeScore:
    cand, ref = _tokens(candidate), _tokens(reference)
    return RougeScore.from_counts(lcs_len(cand, ref), len(cand), len(ref))


def rouge_all(candidate, reference) -> dict[str, RougeScore]:
    return {
        "rouge1": rouge_n(candidate, reference, 1),
        "rouge2": rouge_n(candidate, reference, 2),
        "rougeL": rouge_l(candidate, reference),
    }


def mean_rouge_f1(candidate, reference) -> float:
    s = rouge_all(candidate, reference)
    return (s["rouge1"].f1 + s["rouge2"].f1 + s["rougeL"].f1) / 3.0


def corpus_rouge(pairs, ids=None) -> dict:
    """Unweighted mean F1 per metric over ``(generated, gold)`` pairs.

    The returned dict is the evaluation report:
    ``{"rouge1", "rouge2", "rougeL", "per_review": [...]}``.
    """
    pairs = list(pairs)
    if not pairs:
        raise DegenerateInput("corpus_rouge needs at least one pair")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(pairs))]
    per_review = []
    totals = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    for rid, (gen, gold) in zip(ids, pairs):
        scores = rouge_all(gen, gold)
        entry = {"review_id": rid, "generated": gen if isinstance(gen, str) else " ".join(gen)}
        for key, sc in scores.items():
            totals[key] += sc.f1
            entry[key] = asdict(sc)
        per_review.append(entry)
    report = {k: v / len(pairs) for k, v in totals.items()}
    report["per_review"] = per_review
    return report


def format_table(report: dict, label: str = "model") -> str:
    width = max(len(label), 5)
    head = f"{'':<{width}}  {'R1':>6}  {'R2':>6}  {'RL':>6}"
    row = (f"{label:<{width}}  {report['rouge1']:>6.3f}  {report['rouge2']:>6.3f}"
           f"  {report['rougeL']:>6.3f}")
    return head + "\n" + row + "\n"


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
