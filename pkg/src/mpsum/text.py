"""Dataset I/O, sentence splitting, preprocessing, relevance annotation,
extractive summarization and the paraphrase interface."""
from __future__ import annotations

import json
import re
import string
import unicodedata
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import DuplicateId, EmptyReview, NoGold, ParaphraseError, ParseError, ProtocolError
from .rouge import mean_rouge_f1


@dataclass
class Review:
    review_id: str
    text: str
    summary: str | None = None
    sentences: list[str] = field(default_factory=list)


@dataclass
class LabeledSentence:
    text: str
    raw: str
    label: int | None
    rouge_score: float | None = None
    sim_score: float | None = None

    def to_json(self) -> dict:
        d = {"raw": self.raw, "text": self.text, "label": self.label,
             "rouge_score": self.rouge_score}
        if self.sim_score is not None:
            d["sim_score"] = self.sim_score
        return d


@dataclass
class PreparedReview:
    review_id: str
    summary: str | None
    sentences: list[LabeledSentence]

    @property
    def review_text(self) -> str:
        """Preprocessed review, rebuilt from its preprocessed sentences."""
        return " ".join(s.text for s in self.sentences if s.text)

    def to_json(self) -> dict:
        return {"review_id": self.review_id, "summary": self.summary,
                "sentences": [s.to_json() for s in self.sentences]}


# --------------------------------------------------------------------------
# loading

def _parse_review(obj, lineno):
    if not isinstance(obj, dict):
        raise ParseError(lineno, "expected a JSON object")
    rid, text = obj.get("review_id"), obj.get("text")
    if not isinstance(rid, str):
        raise ParseError(lineno, "missing or non-string 'review_id'")
    if not isinstance(text, str):
        raise ParseError(lineno, "missing or non-string 'text'")
    summary = obj.get("summary")
    if summary is not None and not isinstance(summary, str):
        raise ParseError(lineno, "'summary' must be a string")
    return Review(rid, text, summary)


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None


def load_reviews(path) -> list[Review]:
    reviews, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        review = _parse_review(obj, lineno)
        if review.review_id in seen:
            raise DuplicateId(f"line {lineno}: duplicate review_id {review.review_id!r}")
        seen.add(review.review_id)
        reviews.append(review)
    return reviews


def save_reviews(reviews, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reviews:
            obj = {"review_id": r.review_id, "text": r.text}
            if r.summary is not None:
                obj["summary"] = r.summary
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_prepared(path) -> list[PreparedReview]:
    out, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        try:
            sents = [LabeledSentence(s["text"], s["raw"], s.get("label"), s.get("rouge_score"),
                                     s.get("sim_score")) for s in obj["sentences"]]
            rid = obj["review_id"]
        except (KeyError, TypeError) as exc:
            raise ParseError(lineno, f"malformed prepared record ({exc})") from None
        if rid in seen:
            raise DuplicateId(f"line {lineno}: duplicate review_id {rid!r}")
        seen.add(rid)
        out.append(PreparedReview(rid, obj.get("summary"), sents))
    return out


def save_prepared(prepared, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in prepared:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# splitting and cleaning

_SENTENCE_END = re.compile(r"(?<=[.!?;])\s+")
_URL_PREFIXES = ("http://", "https://", "www.")


def split_sentences(raw: str) -> list[str]:
    """Split after ``. ! ? ;`` when followed by whitespace or end of text."""
    return [s.strip() for s in _SENTENCE_END.split(raw) if s.strip()]


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def preprocess(raw: str) -> str:
    """Lowercase, drop URL tokens, digits and punctuation, squeeze whitespace."""
    text = raw.lower()
    text = " ".join(t for t in text.split() if not t.startswith(_URL_PREFIXES))
    text = "".join(ch for ch in text if not ch.isdigit() and not _is_punct(ch))
    return " ".join(text.split())


# --------------------------------------------------------------------------
# annotation

def cosine(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def annotate(review: Review, embed=None, tau_rouge: float = 0.15, tau_sim: float = 0.8,
             use_sim: bool = False) -> list[LabeledSentence]:
    """Label each sentence relevant (1) or not (0).

    A sentence is relevant when its mean ROUGE-1/2/L F1 against the gold
    summary reaches ``tau_rouge``, or, with ``use_sim``, when the cosine
    between its embedding and the review embedding reaches ``tau_sim``.
    ``embed`` maps preprocessed text to a vector and is only used with
    ``use_sim``. A review without a summary yields unlabeled sentences.
    """
    raws = review.sentences or split_sentences(review.text)
    texts = [preprocess(r) for r in raws]
    if review.summary is None:
        return [LabeledSentence(t, r, None) for t, r in zip(texts, raws)]
    gold = preprocess(review.summary)
    if not gold:
        raise NoGold(f"review {review.review_id!r} has an empty gold summary")
    h_r = None
    if use_sim:
        if embed is None:
            raise ValueError("use_sim requires an embedding function")
        h_r = embed(" ".join(t for t in texts if t))
    out = []
    for text, raw in zip(texts, raws):
        score = mean_rouge_f1(text, gold)
        sim = cosine(embed(text), h_r) if use_sim else None
        label = int(score >= tau_rouge or (use_sim and sim >= tau_sim))
        out.append(LabeledSentence(text, raw, label, score, sim))
    return out


def prepare_review(review: Review, **kwargs) -> PreparedReview:
    sents = [s for s in annotate(review, **kwargs) if s.text]
    return PreparedReview(review.review_id, review.summary, sents)


# --------------------------------------------------------------------------
# paraphrasing

class Paraphraser(Protocol):
    def __call__(self, sentences: list[str]) -> list[str]: ...


def identity_paraphrase(sentences: list[str]) -> list[str]:
    return list(sentences)


def remote_paraphrase(sentences: list[str], endpoint: str, timeout: float = 10.0) -> list[str]:
    """POST ``{"sentences": [...]}``; expects ``{"paraphrases": [...]}`` back."""
    body = json.dumps({"sentences": list(sentences)}).encode("utf-8")
    req = urllib.request.Request(endpoint, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            status = resp.status
            payload = resp.read()
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise ParaphraseError(f"paraphrase request to {endpoint} failed: {exc}") from exc
    if status != 200:
        raise ParaphraseError(f"paraphrase endpoint returned HTTP {status}")
    try:
        out = json.loads(payload)["paraphrases"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed paraphrase response: {exc}") from exc
    if not isinstance(out, list) or not all(isinstance(s, str) for s in out):
        raise ProtocolError("'paraphrases' must be a list of strings")
    if len(out) != len(sentences):
        raise ProtocolError(f"expected {len(sentences)} paraphrases, got {len(out)}")
    return out


@dataclass(frozen=True)
class RemoteParaphraser:
    endpoint: str
    timeout: float = 10.0

    def __call__(self, sentences: list[str]) -> list[str]:
        if not sentences:
            return []
        return remote_paraphrase(sentences, self.endpoint, self.timeout)


# --------------------------------------------------------------------------
# summarization

@dataclass
class SummaryResult:
    sentences: list[str]          # all preprocessed sentences, review order
    scores: list[float]           # relevance probability per sentence
    selected: list[int]           # indices into ``sentences``, ascending
    paraphrased: list[str]
    final: str
    empty: bool


def select_sentences(scores, threshold: float = 0.5, top_k: int | None = None) -> list[int]:
    scores = list(scores)
    if top_k is not None:
        # stable sort: ties keep the earlier sentence
        ranked = sorted(range(len(scores)), key=lambda i: -scores[i])
        return sorted(ranked[:top_k])
    return [i for i, s in enumerate(scores) if s >= threshold]


def _finish(sentences, scores, paraphraser, threshold, top_k) -> SummaryResult:
    selected = select_sentences(scores, threshold, top_k)
    chosen = [sentences[i] for i in selected]
    paraphrased = paraphraser(chosen) if chosen else []
    return SummaryResult(sentences, scores, selected, paraphrased, " ".join(paraphrased),
                         not selected)


def summarize_sentences(sentences: list[str], scorer, paraphraser=identity_paraphrase,
                        threshold: float = 0.5, top_k: int | None = None) -> SummaryResult:
    """Score, select, paraphrase and join. ``scorer(review_text, sentences)``
    returns one probability per sentence."""
    sentences = [s for s in sentences if s]
    if not sentences:
        raise EmptyReview("review has no sentences")
    scores = [float(s) for s in scorer(" ".join(sentences), sentences)]
    return _finish(sentences, scores, paraphraser, threshold, top_k)


def summarize(review: Review | str, scorer, paraphraser=identity_paraphrase,
              threshold: float = 0.5, top_k: int | None = None) -> SummaryResult:
    raw = review.text if isinstance(review, Review) else review
    sentences = [preprocess(s) for s in split_sentences(raw)]
    return summarize_sentences(sentences, scorer, paraphraser, threshold, top_k)


def summarize_many(items, scorer, paraphraser=identity_paraphrase, threshold=0.5,
                   top_k=None, jobs: int = 1) -> list[SummaryResult]:
    """Summaries for several reviews (each a list of preprocessed sentences).
    Scoring runs on ``jobs`` threads; paraphrasing stays sequential."""
    items = [[s for s in sents if s] for sents in items]
    for sents in items:
        if not sents:
            raise EmptyReview("review has no sentences")

    def score(sents):
        return [float(x) for x in scorer(" ".join(sents), sents)]

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            all_scores = list(pool.map(score, items))
    else:
        all_scores = [score(s) for s in items]
    return [_finish(sents, sc, paraphraser, threshold, top_k)
            for sents, sc in zip(items, all_scores)]
