import itertools
import json

import pytest
from hypothesis import given, strategies as st

from mpsum.errors import DegenerateInput
from mpsum.rouge import (corpus_rouge, dumps_report, format_table, lcs_len, rouge_l, rouge_n)

tokens = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=8)


def brute_lcs(x, y):
    best = 0
    for r in range(len(x) + 1):
        for idx in itertools.combinations(range(len(x)), r):
            it = iter(y)
            if all(x[i] in it for i in idx):
                best = r
    return best


def test_hand_cases():
    r1 = rouge_n("the cat", "the cat sat", 1)
    assert (r1.precision, r1.recall) == (1.0, 2 / 3) and abs(r1.f1 - 0.8) <= 1e-12
    r2 = rouge_n("the cat", "the cat sat", 2)
    assert (r2.precision, r2.recall) == (1.0, 0.5) and abs(r2.f1 - 2 / 3) <= 1e-12
    rl = rouge_l("the cat", "the cat sat")
    assert abs(rl.f1 - 0.8) <= 1e-12
    assert rouge_n("x y z", "x y z", 2).f1 == 1.0
    assert rouge_l("the cat", "dog runs").f1 == 0.0 and rouge_n("the cat", "dog", 1).f1 == 0.0
    assert lcs_len("the cat".split(), "sat cat the".split()) == 1
    assert lcs_len("a b c".split(), "a c".split()) == 2
    assert lcs_len(["a"], []) == 0


def test_clipped_counts():
    # "the" appears twice in the candidate but once in the reference
    assert rouge_n("the the", "the cat", 1).precision == 0.5


@pytest.mark.parametrize("n", range(7))
def test_lcs_brute_force_exhaustive(n):
    alphabet = "ab"
    for x in itertools.product(alphabet, repeat=n):
        for m in range(7):
            for y in itertools.product(alphabet, repeat=m):
                assert lcs_len(list(x), list(y)) == brute_lcs(x, y)


@given(tokens, tokens)
def test_lcs_brute_force_random(x, y):
    assert lcs_len(x, y) == brute_lcs(x, y)


@given(st.lists(st.sampled_from(list("abcdefg")), min_size=1, max_size=10), st.integers(1, 4))
def test_self_score_is_one(x, n):
    if n <= len(x):
        assert rouge_n(x, x, n).f1 == 1.0


@given(tokens.filter(bool), tokens.filter(bool))
def test_rouge_l_bounded_by_rouge_1(x, y):
    assert rouge_l(x, y).f1 <= rouge_n(x, y, 1).f1 + 1e-15


@given(tokens.filter(bool), tokens.filter(bool), st.sampled_from(["z", "a"]))
def test_appending_reference_token_never_raises_recall_with_fixed_overlap(x, y, tok):
    before = rouge_n(x, y, 1)
    after = rouge_n(x, y + [tok], 1)
    if round(after.recall * (len(y) + 1)) == round(before.recall * len(y)):
        assert after.recall <= before.recall


def test_corpus_means():
    single = corpus_rouge([("the cat", "the cat sat")])
    assert single["rouge1"] == rouge_n("the cat", "the cat sat", 1).f1
    # F1 0.4 and 0.8 -> mean 0.6
    pairs = [("a b c d e", "a b x y z"), ("the cat", "the cat sat")]
    assert rouge_n(*pairs[0], 1).f1 == pytest.approx(0.4)
    assert corpus_rouge(pairs)["rouge1"] == pytest.approx(0.6)
    same = corpus_rouge([("x y", "x y"), ("p q r", "p q r")], ids=["r1", "r2"])
    assert same["rouge1"] == same["rouge2"] == same["rougeL"] == 1.0
    assert [e["review_id"] for e in same["per_review"]] == ["r1", "r2"]
    with pytest.raises(DegenerateInput):
        corpus_rouge([])


def test_table_and_report_format():
    rep = corpus_rouge([("x y", "x y")])
    lines = format_table(rep).splitlines()
    assert lines[0].split() == ["R1", "R2", "RL"]
    assert lines[1].split()[1:] == ["1.000", "1.000", "1.000"]
    assert json.loads(dumps_report(rep))["rougeL"] == 1.0
