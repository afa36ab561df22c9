"""Fast invariant suites run by ``mpsum selfcheck``.

Each suite returns ``(ok, detail)``. ``inject_fault=True`` flips the sign of
the ZOH input gain for the duration of the run, which the discretization
suite must catch.
"""
from __future__ import annotations

import contextlib
import itertools
import math
import time

import numpy as np

from . import ssm
from .config import RunConfig
from .checkpoint import Checkpoint
from .gradcheck import numeric_grad, relative_error
from .head import (BatchNormState, LinearHead, OneCycleSchedule, OptimizerState, adamw_step,
                   onecycle_lr)
from .numerics import jacobi_eigh, rng_derive
from .poincare import fit_compressor, kmeans, poincare_distance, rbf_affinity, spectral_embed
from .rouge import lcs_len, rouge_l, rouge_n
from .training import Example, lora_step_grads

TINY_TEXTS = [
    "great coffee strong taste would buy again",
    "the box arrived late on tuesday",
    "terrible kettle leaks water everywhere",
    "shipping was quick and the seller was kind",
    "superb lamp bright light warm color",
    "my cousin liked the package",
]


def tiny_model(seed: int = 0, d_model: int = 8, n_layers: int = 2, d_state: int = 4,
               chunk_size: int = 3, taylor_threshold: float = 1e-4, compression: bool = True):
    """Small randomly initialised model with non-zero adapters, plus a batch.

    Used for gradient checks where finite differences must stay cheap.
    """
    rng = np.random.default_rng(seed)
    cfg = ssm.EncoderConfig(d_model=d_model, d_state=d_state, n_layers=n_layers,
                            chunk_size=chunk_size, delta_taylor_threshold=taylor_threshold)
    vocab = ssm.build_vocab(TINY_TEXTS)
    params = ssm.init_params(cfg, len(vocab), seed)
    review = " ".join(TINY_TEXTS[:3])
    batch = [Example(review, TINY_TEXTS[i], i % 2) for i in range(3)]
    batch.append(Example(" ".join(TINY_TEXTS[3:]), TINY_TEXTS[4], 1))
    pairs = [np.concatenate([ssm.encode(e.review, vocab, params), ssm.encode(e.sentence, vocab, params)])
             for e in batch]
    extra = [np.concatenate([ssm.encode(t, vocab, params), ssm.encode(t, vocab, params)])
             for t in TINY_TEXTS]
    compressor = fit_compressor(np.stack(pairs + extra), 3, seed) if compression else None
    width = 3 if compression else 2 * d_model
    adapters = ssm.init_adapters(cfg, seed, rank=2, alpha=4.0, dropout=0.1)
    for ad in adapters.values():
        ad.b[:] = rng.normal(0.0, 0.1, ad.b.shape)
    bn = BatchNormState(rng.uniform(0.5, 1.5, width), rng.normal(0, 0.1, width), np.zeros(width),
                        np.ones(width))
    head = LinearHead(rng.normal(0, 1, width), 0.1)
    ck = Checkpoint(vocab, params, compressor, bn, head, RunConfig(seed=seed), adapters)
    return ck, batch


def lora_path_error(seed: int, taylor_threshold: float = 1e-4, compression: bool = True) -> float:
    """Worst relative error of the end-to-end analytic gradients (adapters,
    batch norm, head) against central differences."""
    ck, batch = tiny_model(seed, taylor_threshold=taylor_threshold, compression=compression)

    def run():
        return lora_step_grads(batch, ck, ck.adapters, ck.batchnorm, ck.head,
                               rng_derive(seed, "fd:drop"), rng_derive(seed, "fd:lora"), 0.5)

    _, grads = run()
    targets = {"bn.gamma": ck.batchnorm.gamma, "bn.beta": ck.batchnorm.beta,
               "head.w": ck.head.w}
    for name, ad in ck.adapters.items():
        targets[f"lora.{name}.a"] = ad.a
        targets[f"lora.{name}.b"] = ad.b
    worst = 0.0
    for name, arr in targets.items():
        fd = numeric_grad(lambda: run()[0], arr)
        worst = max(worst, relative_error(grads[name], fd))
    bias = np.array([ck.head.b])

    def run_bias():
        ck.head.b = float(bias[0])
        return run()[0]

    fd = numeric_grad(run_bias, bias)
    ck.head.b = float(bias[0])
    return max(worst, relative_error(grads["head.b"], fd))


# --------------------------------------------------------------------------
# suites

def suite_eigensolver():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 50))
    m = (x + x.T) / 2
    e = jacobi_eigh(m)
    norm = np.linalg.norm(m)
    recon = np.linalg.norm(m @ e.eigenvectors - e.eigenvectors * e.eigenvalues)
    trace_err = abs(e.eigenvalues.sum() - np.trace(m))
    ok = recon <= 1e-8 * norm and trace_err <= 1e-8
    return ok, f"recon {recon / norm:.1e}, trace {trace_err:.1e}"


def suite_discretization():
    a_bar, b_bar = ssm.discretize(0.1, -1.0, 1.0)
    exact_ok = abs(a_bar - math.exp(-0.1)) <= 1e-7 and abs(b_bar - (1 - math.exp(-0.1))) <= 1e-7
    delta = 1e-4
    # exact branch evaluated by hand; the op switches to Taylor just below |z| = 1e-4
    z = -delta * (1 + 1e-12)
    exact = math.expm1(z) / -1.0
    _, taylor = ssm.discretize(delta * (1 + 1e-12), -1.0, 1.0, threshold=1e-3)
    _, near = ssm.discretize(delta * (1 - 1e-12), -1.0, 1.0)
    branch_ok = abs(exact - taylor) <= 1e-12 and abs(near - exact) <= 1e-12
    return exact_ok and branch_ok, f"a_bar {a_bar:.7f}, b_bar {b_bar:.7f}"


def suite_scan(cases: int = 10):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(cases):
        a = np.exp(-rng.uniform(0.0, 0.5, (128, 128, 16)))
        d = rng.standard_normal((128, 128, 16))
        c = rng.standard_normal((128, 16))
        worst = max(worst, np.abs(ssm.selective_scan_parallel(a, d, c)
                                  - ssm.selective_scan_seq(a, d, c)).max())
    return worst <= 1e-10, f"max diff {worst:.1e} over {cases} cases"


def suite_hippo():
    m = ssm.hippo_legs_matrix(8)
    ok = all(m[n, k] == (-math.sqrt(2 * n + 1) * math.sqrt(2 * k + 1) if n > k
                         else -(n + 1) if n == k else 0.0)
             for n in range(8) for k in range(8))
    p = ssm.init_params(ssm.EncoderConfig(d_model=4, d_state=8, n_layers=1), 4, 0)
    ok = ok and np.array_equal(p.layers[0].a, np.tile(np.diag(m), (8, 1)))
    return ok, "closed form and encoder A diagonal"


def suite_gradients(seeds=(0, 1)):
    worst = max(lora_path_error(s) for s in seeds)
    return worst <= 1e-4, f"max relative error {worst:.1e}"


def suite_recompute():
    ck, batch = tiny_model(3)
    texts = [e.sentence for e in batch] + [batch[0].review]
    up = np.random.default_rng(3).standard_normal((len(texts), ck.params.config.d_model))
    g1 = ssm.encode_backward(texts, up, ck.vocab, ck.params, ck.adapters, recompute=True)
    g2 = ssm.encode_backward(texts, up, ck.vocab, ck.params, ck.adapters, recompute=False)
    diff = max(np.abs(g1[k][i] - g2[k][i]).max() for k in g1 for i in (0, 1))
    return diff <= 1e-10, f"max diff {diff:.1e}"


def suite_poincare(n: int = 1000):
    rng = np.random.default_rng(2)

    def point():
        v = rng.standard_normal(6)
        return v / np.linalg.norm(v) * rng.uniform(0, 0.99)

    ok = True
    for _ in range(n):
        a, b, c = point(), point(), point()
        dab, dba = poincare_distance(a, b), poincare_distance(b, a)
        ok &= dab == dba and dab >= 0.0
        ok &= poincare_distance(a, c) <= dab + poincare_distance(b, c) + 1e-9
        ok &= poincare_distance(a, a) == 0.0
        ok &= abs(poincare_distance(np.zeros(6), b) - 2 * np.arctanh(np.linalg.norm(b))) <= 1e-9
    return bool(ok), f"{n} triples"


def suite_rouge():
    ok = (abs(rouge_n("the cat", "the cat sat", 1).f1 - 0.8) <= 1e-12
          and abs(rouge_n("the cat", "the cat sat", 2).f1 - 2 / 3) <= 1e-12
          and abs(rouge_l("the cat", "the cat sat").f1 - 0.8) <= 1e-12)
    vocab = ["a", "b", "c"]
    for la, lb in itertools.product(range(5), repeat=2):
        for x in itertools.product(vocab, repeat=la):
            y = tuple(vocab[(i * 2 + la) % 3] for i in range(lb))
            best = 0
            for mask in range(1 << la):
                sub = [x[i] for i in range(la) if mask >> i & 1]
                it = iter(y)
                if all(tok in it for tok in sub):
                    best = max(best, len(sub))
            ok &= lcs_len(list(x), list(y)) == best
    return bool(ok), "hand cases and brute-force LCS"


def suite_schedule():
    s = OneCycleSchedule(2e-5, 1000)
    ends = (onecycle_lr(0, s), onecycle_lr(s.peak_step, s), onecycle_lr(1000, s))
    ok = all(abs(v - t) <= 1e-12 for v, t in zip(ends, (8e-7, 2e-5, 8e-11)))
    w = {"w": np.array([1.0])}
    st = OptimizerState()
    expected = 1.0
    for step in range(20):
        lr = onecycle_lr(step, s)
        adamw_step(w, {"w": np.zeros(1)}, st, lr)
        expected *= 1.0 - lr * 0.5
    ok = ok and w["w"][0] == expected
    return ok, "one-cycle endpoints and decoupled decay"


def suite_clustering():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.normal(0, 0.1, (50, 2)), rng.normal(0, 0.1, (50, 2)) + [10.0, 0.0]])
    assign, _ = kmeans(spectral_embed(rbf_affinity(x), 2), 2, rng_derive(4, "cluster"))
    ok = len(set(assign[:50])) == 1 and len(set(assign[50:])) == 1 and assign[0] != assign[50]
    return bool(ok), "two separated blobs"


SUITES = [
    ("eigensolver", suite_eigensolver),
    ("discretization", suite_discretization),
    ("scan-equivalence", suite_scan),
    ("hippo", suite_hippo),
    ("gradients", suite_gradients),
    ("backward-recompute", suite_recompute),
    ("poincare-metric", suite_poincare),
    ("rouge", suite_rouge),
    ("schedule", suite_schedule),
    ("spectral-clustering", suite_clustering),
]


@contextlib.contextmanager
def fault_injected(enabled: bool):
    prev = ssm._FAULT_FLIP_INPUT_GAIN
    ssm._FAULT_FLIP_INPUT_GAIN = enabled
    try:
        yield
    finally:
        ssm._FAULT_FLIP_INPUT_GAIN = prev


def run_selfcheck(inject_fault: bool = False, out=print) -> bool:
    all_ok = True
    with fault_injected(inject_fault):
        for name, suite in SUITES:
            t0 = time.perf_counter()
            try:
                ok, detail = suite()
            except Exception as exc:  # a crashing suite is a failing suite
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            all_ok &= bool(ok)
            out(f"{'PASS' if ok else 'FAIL'}  {name:<20} {detail} ({time.perf_counter() - t0:.2f}s)")
    return all_ok
