"""Acceptance criteria 1-13, one test each.

Every test prints a single ``[ACCEPT nn] PASS|FAIL ...`` line; run with
``pytest -s tests/test_acceptance.py`` to see them, or execute this file
directly for a compact summary.
"""
import csv
import itertools
import json
import math
import time

import numpy as np
import pytest

from mpsum import ssm
from mpsum.checkpoint import load as load_checkpoint
from mpsum.head import OneCycleSchedule, OptimizerState, adamw_step, onecycle_lr
from mpsum.numerics import jacobi_eigh, rng_derive
from mpsum.poincare import kmeans, poincare_distance, rbf_affinity, spectral_embed
from mpsum.rouge import lcs_len, rouge_l, rouge_n
from mpsum.selfcheck import lora_path_error
from mpsum.text import load_prepared
from mpsum.training import score_sentences

from conftest import FIXTURE_CONFIG, run_cli, run_pipeline


def verdict(number, ok, detail):
    print(f"\n[ACCEPT {number:02d}] {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_01_scan_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        a = np.exp(-rng.uniform(0.0, 1.0, (128, 128, 16)))
        d = rng.standard_normal((128, 128, 16))
        c = rng.standard_normal((128, 16))
        diff = ssm.selective_scan_parallel(a, d, c) - ssm.selective_scan_seq(a, d, c)
        worst = max(worst, float(np.abs(diff).max()))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-10 and elapsed < 30,
            f"scan equivalence: max diff {worst:.2e} (<= 1e-10), {elapsed:.1f}s (< 30s)")


def test_02_discretization():
    a_bar, b_bar = ssm.discretize(0.1, -1.0, 1.0)
    ok_ref = abs(a_bar - 0.9048374) <= 1e-7 and abs(b_bar - 0.0951626) <= 1e-7
    worst = 0.0
    for a in (-1.0, -2.0, -7.0):
        delta = 1e-4 / abs(a)
        _, exact, _ = ssm._zoh_factors(np.float64(delta), np.float64(a), threshold=0.0)
        _, taylor, _ = ssm._zoh_factors(np.float64(delta), np.float64(a), threshold=1.0)
        worst = max(worst, abs(float(exact) - float(taylor)))
    verdict(2, ok_ref and worst <= 1e-12,
            f"discretization: a_bar {a_bar:.7f}, b_bar {b_bar:.7f}; branch gap {worst:.1e} (<= 1e-12)")


def test_03_hippo_reference():
    m = ssm.hippo_legs_matrix(8)
    # the usual factored form sqrt(2n+1) * sqrt(2k+1); the fused sqrt((2n+1)(2k+1))
    # can differ in the last ulp, so it is reported but only checked to 1 ulp
    closed = np.array([[-math.sqrt(2 * n + 1) * math.sqrt(2 * k + 1) if n > k
                        else (-(n + 1) if n == k else 0.0) for k in range(8)] for n in range(8)])
    fused = np.array([[-math.sqrt((2 * n + 1) * (2 * k + 1)) if n > k else m[n, k]
                       for k in range(8)] for n in range(8)])
    exact = np.array_equal(m, closed)
    ulp_ok = np.all(np.abs(m - fused) <= np.spacing(np.abs(fused)))
    p = ssm.init_params(ssm.EncoderConfig(d_model=8, d_state=8), 5, 0)
    diag = all(np.array_equal(lp.a, np.tile(np.diag(m), (16, 1))) for lp in p.layers)
    verdict(3, exact and diag and ulp_ok,
            f"HiPPO: closed form exact={exact}, encoder A diagonal={diag}, fused form within 1 ulp={ulp_ok}")


def test_04_gradient_checks():
    errors = [lora_path_error(seed) for seed in range(5)]
    verdict(4, max(errors) <= 1e-4,
            f"gradients (head, batch norm, LoRA path; 5 seeds): max rel err {max(errors):.1e} (<= 1e-4)")


def test_05_backward_recompute():
    from mpsum.selfcheck import TINY_TEXTS, tiny_model

    worst = 0.0
    for seed in range(3):
        ck, _ = tiny_model(seed, chunk_size=4)
        up = np.random.default_rng(seed).standard_normal((len(TINY_TEXTS), 8))
        g1 = ssm.encode_backward(TINY_TEXTS, up, ck.vocab, ck.params, ck.adapters, recompute=True)
        g2 = ssm.encode_backward(TINY_TEXTS, up, ck.vocab, ck.params, ck.adapters, recompute=False)
        worst = max(worst, max(float(np.abs(x - y).max())
                               for k in g1 for x, y in zip(g1[k], g2[k])))
    verdict(5, worst <= 1e-10, f"chunked recompute vs stored states: max diff {worst:.1e} (<= 1e-10)")


def test_06_poincare_metric():
    rng = np.random.default_rng(6)

    def point():
        v = rng.standard_normal(8)
        return v / np.linalg.norm(v) * rng.uniform(0.0, 0.99)

    sym = nonneg = ident = True
    tri = closed = 0.0
    for _ in range(1000):
        a, b, c = point(), point(), point()
        dab = poincare_distance(a, b)
        sym &= dab == poincare_distance(b, a)
        nonneg &= dab >= 0.0
        ident &= poincare_distance(a, a) == 0.0
        tri = max(tri, poincare_distance(a, c) - dab - poincare_distance(b, c))
        closed = max(closed, abs(poincare_distance(np.zeros(8), b) - 2 * math.atanh(np.linalg.norm(b))))
    ok = sym and nonneg and ident and tri <= 1e-9 and closed <= 1e-9
    verdict(6, ok, f"Poincare metric (1000 triples): symmetric={sym}, nonneg={nonneg}, "
                   f"d(a,a)=0 {ident}, triangle slack {tri:.1e}, origin form err {closed:.1e}")


def test_07_eigensolver():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((50, 50))
    m = (x + x.T) / 2
    e = jacobi_eigh(m)
    rel = np.linalg.norm(m @ e.eigenvectors - e.eigenvectors * e.eigenvalues) / np.linalg.norm(m)
    trace = abs(e.eigenvalues.sum() - np.trace(m))
    verdict(7, rel <= 1e-8 and trace <= 1e-8,
            f"eigensolver 50x50: ||MQ-QL||/||M|| {rel:.1e} (<= 1e-8), trace err {trace:.1e}")


def test_08_spectral_clustering():
    purities = []
    truth = np.repeat([0, 1], 50)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = np.vstack([rng.normal(0, 0.1, (50, 2)), rng.normal(0, 0.1, (50, 2)) + [10.0, 0.0]])
        assign, _ = kmeans(spectral_embed(rbf_affinity(x), 2), 2, rng_derive(seed, "cluster"))
        purities.append(sum(np.bincount(truth[assign == c]).max() for c in set(assign.tolist())) / 100)
    verdict(8, min(purities) == 1.0, f"spectral clustering: min purity {min(purities)} over 10 seeds")


def _brute_lcs(x, y):
    for r in range(len(x), -1, -1):
        for idx in itertools.combinations(range(len(x)), r):
            it = iter(y)
            if all(x[i] in it for i in idx):
                return r
    return 0


def test_09_rouge():
    hand = (abs(rouge_n("the cat", "the cat sat", 1).f1 - 0.8) <= 1e-12
            and abs(rouge_n("the cat", "the cat sat", 2).f1 - 2 / 3) <= 1e-12
            and abs(rouge_l("the cat", "the cat sat").f1 - 0.8) <= 1e-12)
    lists = [x for n in range(7) for x in itertools.product("ab", repeat=n)]
    mismatches = sum(lcs_len(list(x), list(y)) != _brute_lcs(x, y) for x in lists for y in lists)
    verdict(9, hand and mismatches == 0,
            f"ROUGE hand cases exact={hand}; LCS vs brute force on {len(lists) ** 2} pairs "
            f"(lengths <= 6): {mismatches} mismatches")


def test_10_optimizer_schedule():
    s = OneCycleSchedule(2e-5, 1000)
    ends = [onecycle_lr(0, s), onecycle_lr(s.peak_step, s), onecycle_lr(1000, s)]
    end_err = max(abs(v - t) for v, t in zip(ends, (8e-7, 2e-5, 8e-11)))
    w = {"w": np.array([1.0])}
    opt = OptimizerState()
    exact = True
    for step in range(100):
        before = w["w"][0]
        lr = onecycle_lr(step, s)
        adamw_step(w, {"w": np.zeros(1)}, opt, lr)
        exact &= w["w"][0] == before * (1.0 - lr * 0.5)
    verdict(10, end_err <= 1e-12 and exact,
            f"schedule endpoints err {end_err:.1e} (<= 1e-12); exact per-step decay={exact}")


@pytest.fixture(scope="module")
def timed_head_run(tmp_path_factory):
    t0 = time.perf_counter()
    out = run_pipeline(tmp_path_factory.mktemp("accept_head"))
    return out, time.perf_counter() - t0


def test_11_end_to_end(timed_head_run, lora_run):
    run, elapsed = timed_head_run
    acc = float(list(csv.DictReader(open(run["trace"])))[-1]["accuracy"])
    r1 = json.loads(run["report"].read_text())["rouge1"]
    lora = {int(r["step"]): float(r["loss"]) for r in csv.DictReader(open(lora_run["trace"]))
            if r["phase"] == "lora"}
    ok = elapsed < 300 and acc >= 0.9 and r1 >= 0.5 and lora[50] < lora[0]
    verdict(11, ok, f"fixture pipeline {elapsed:.1f}s (< 300s), train acc {acc:.3f} (>= 0.9), "
                    f"R1 {r1:.3f} (>= 0.5); lora loss step0 {lora[0]:.4f} -> step50 {lora[50]:.4f}")


def test_12_determinism(tmp_path):
    outputs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        head = run_pipeline(d, seed=42, jobs=1)
        lora = d / "lora.json"
        res = run_cli("train", "--dataset", head["prepared"], "--mode", "lora", "--out", lora,
                      "--config", FIXTURE_CONFIG, "--seed", 42)
        assert res.returncode == 0, res.stderr
        rep = d / "lora_report.json"
        assert run_cli("evaluate", "--dataset", head["prepared"], "--ckpt", lora, "--report", rep,
                       "--jobs", 1).returncode == 0
        outputs.append([p.read_bytes() for p in (head["prepared"], head["ckpt"], head["report"],
                                                 head["trace"], lora, d / "lora.trace.csv", rep)])
    same = outputs[0] == outputs[1]
    verdict(12, same, f"two --seed 42 --jobs 1 runs: prepared/checkpoints/traces/reports "
                      f"byte-identical={same}")


def test_13_lora_neutrality(timed_head_run):
    run, _ = timed_head_run
    ck = load_checkpoint(run["ckpt"])
    fresh = ssm.init_adapters(ck.params.config, ck.seed, ck.config.lora.rank, ck.config.lora.alpha,
                              ck.config.lora.dropout)
    with_ads = type(ck)(**{**ck.__dict__, "adapters": fresh})
    total = identical = 0
    for p in load_prepared(run["prepared"]):
        sents = [s.text for s in p.sentences]
        a = score_sentences(ck, p.review_text, sents)
        b = score_sentences(with_ads, p.review_text, sents)
        total += len(sents)
        identical += int(np.sum(a == b))
    verdict(13, identical == total,
            f"fresh adapters: {identical}/{total} fixture predictions bitwise identical")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
