"""Relevance scoring and the two training regimes.

``train_head`` freezes a randomly initialised encoder, fits the Poincaré
compressor on every training pair embedding and trains batch norm + linear
head on the cached features. ``train_lora`` continues from that model with
low-rank adapters on the encoder projections, back-propagating through the
compressor and the selective scan.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import PREPROCESSING, Checkpoint
from .config import RunConfig
from .errors import DegenerateLabels
from .head import (BatchNormState, LinearHead, OneCycleSchedule, OptimizerState, adamw_step,
                   batchnorm_backward, batchnorm_forward, bce_loss, dropout, linear_forward,
                   onecycle_lr)
from .numerics import rng_derive, sigmoid
from .poincare import compress, compress_backward, fit_compressor
from .ssm import (backward_from_trace, build_vocab, encode, encode_forward, init_adapters,
                  init_params)
from .text import PreparedReview

log = logging.getLogger(__name__)

HEAD_NO_DECAY = frozenset({"head.b", "bn.gamma", "bn.beta"})


@dataclass
class Example:
    review: str
    sentence: str
    label: int


@dataclass
class TraceRow:
    phase: str
    epoch: int
    step: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[TraceRow] = field(default_factory=list)


def labeled_examples(prepared: list[PreparedReview]) -> list[Example]:
    out = []
    for rev in prepared:
        review_text = rev.review_text
        for s in rev.sentences:
            if s.text and s.label is not None:
                out.append(Example(review_text, s.text, int(s.label)))
    return out


def _check_labels(examples):
    labels = {e.label for e in examples}
    if labels != {0, 1}:
        raise DegenerateLabels(f"training needs both classes, found {sorted(labels)}")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        # a single-row batch cannot be batch-normalized
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _n_batches(n, batch_size):
    k = -(-n // batch_size)
    return k - 1 if k > 1 and n % batch_size == 1 else k


# --------------------------------------------------------------------------
# scoring

def _embed_cached(texts, ck: Checkpoint, adapters=None) -> dict[str, np.ndarray]:
    cache = {}
    for t in texts:
        if t not in cache:
            cache[t] = encode(t, ck.vocab, ck.params, adapters)
    return cache


def _features(h_rs, ck: Checkpoint) -> np.ndarray:
    # without a compressor (ablation) the head sees the raw pair embedding
    return h_rs if ck.compressor is None else compress(h_rs, ck.compressor)


def pair_features(examples, ck: Checkpoint, adapters=None) -> np.ndarray:
    emb = _embed_cached([t for e in examples for t in (e.review, e.sentence)], ck, adapters)
    return np.stack([_features(np.concatenate([emb[e.review], emb[e.sentence]]), ck)
                     for e in examples])


def head_logits(features, ck: Checkpoint) -> np.ndarray:
    out, _ = batchnorm_forward(features, ck.batchnorm, train=False)
    return np.atleast_1d(linear_forward(out, ck.head))


def score_sentences(ck: Checkpoint, review_text: str, sentences: list[str]) -> np.ndarray:
    """Relevance probability for each sentence of one (preprocessed) review."""
    examples = [Example(review_text, s, 0) for s in sentences]
    return sigmoid(head_logits(pair_features(examples, ck, ck.adapters), ck))


def evaluate_loss(examples, ck: Checkpoint, adapters=None) -> tuple[float, float]:
    """Eval-mode mean BCE and accuracy (threshold 0.5) over ``examples``."""
    logits = head_logits(pair_features(examples, ck, adapters), ck)
    labels = np.array([e.label for e in examples], dtype=np.float64)
    loss, _ = bce_loss(logits, labels)
    acc = float(np.mean((logits >= 0.0) == (labels == 1.0)))
    return loss, acc


# --------------------------------------------------------------------------
# head regime

def _head_step(feats, labels, bn, head, rng_drop, p_drop):
    """Train-mode forward/backward through BN, dropout and the linear layer.
    Returns ``(loss, grads, g_features)``."""
    z, bn_cache = batchnorm_forward(feats, bn, train=True)
    zd, mask = dropout(z, p_drop, rng_drop, train=True)
    logits = zd @ head.w + head.b
    loss, g_logits = bce_loss(logits, labels)
    g_w = zd.T @ g_logits
    g_b = np.array([g_logits.sum()])
    g_zd = np.outer(g_logits, head.w)
    g_z = g_zd if mask is None else g_zd * mask
    g_feats, g_gamma, g_beta = batchnorm_backward(g_z, bn_cache)
    grads = {"head.w": g_w, "head.b": g_b, "bn.gamma": g_gamma, "bn.beta": g_beta}
    return loss, grads, g_feats


def _head_param_views(bn, head):
    bias = np.array([head.b])
    return {"head.w": head.w, "head.b": bias, "bn.gamma": bn.gamma, "bn.beta": bn.beta}, bias


def fit_head(features, labels, config: RunConfig, bn: BatchNormState | None = None,
             head: LinearHead | None = None, epochs: int | None = None):
    """Train batch norm + linear head on fixed features.

    Returns ``(bn, head, trace)`` where each trace row holds the mean train
    loss of the epoch and the eval-mode training accuracy after it.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n, width = features.shape
    seed = config.seed
    bn = bn or BatchNormState.create(width)
    head = head or LinearHead.init(width, rng_derive(seed, "init:head"))
    epochs = epochs or config.epochs
    rng_shuffle = rng_derive(seed, "shuffle")
    rng_drop = rng_derive(seed, "dropout")
    steps_per_epoch = _n_batches(n, config.batch_size)
    schedule = OneCycleSchedule(config.lr, epochs * steps_per_epoch)
    opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    params, bias = _head_param_views(bn, head)

    trace = []
    step = 0
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _batches(n, config.batch_size, rng_shuffle):
            loss, grads, _ = _head_step(features[idx], labels[idx], bn, head, rng_drop,
                                        config.dropout)
            adamw_step(params, grads, opt, onecycle_lr(step, schedule), HEAD_NO_DECAY)
            head.b = float(bias[0])
            step += 1
            losses.append(loss)
        out, _ = batchnorm_forward(features, bn, train=False)
        acc = float(np.mean(((out @ head.w + head.b) >= 0.0) == (labels == 1.0)))
        trace.append(TraceRow("head", epoch, step, float(np.mean(losses)), acc))
    return bn, head, trace


def train_head(prepared: list[PreparedReview], config: RunConfig) -> TrainResult:
    examples = labeled_examples(prepared)
    _check_labels(examples)
    seed = config.seed
    corpus = [rev.review_text for rev in prepared]
    vocab = build_vocab(corpus)
    params = init_params(config.encoder, len(vocab), seed)

    ck = Checkpoint(vocab, params, None, None, None, config, None, dict(PREPROCESSING))
    emb = _embed_cached([t for e in examples for t in (e.review, e.sentence)], ck)
    pairs = np.stack([np.concatenate([emb[e.review], emb[e.sentence]]) for e in examples])
    if config.compression:
        ck.compressor = fit_compressor(pairs, config.n_clusters, seed)
    feats = np.stack([_features(h, ck) for h in pairs])
    labels = np.array([e.label for e in examples], dtype=np.float64)
    log.info("fitting head on %d examples (%d positive)", len(labels), int(labels.sum()))
    ck.batchnorm, ck.head, trace = fit_head(feats, labels, config)
    return TrainResult(ck, trace)


# --------------------------------------------------------------------------
# LoRA regime

def lora_step_grads(batch: list[Example], ck: Checkpoint, adapters, bn, head, rng_drop,
                    rng_lora, p_drop):
    """Loss and gradients for adapters (``lora.<name>.a|b``) and head params on
    one batch, back-propagated through compression and the encoder."""
    texts = list(dict.fromkeys(t for e in batch for t in (e.review, e.sentence)))
    traces, emb = {}, {}
    for t in texts:
        emb[t], traces[t] = encode_forward(t, ck.vocab, ck.params, adapters, rng_lora)
    pairs = [np.concatenate([emb[e.review], emb[e.sentence]]) for e in batch]
    feats = np.stack([_features(h, ck) for h in pairs])
    labels = np.array([e.label for e in batch], dtype=np.float64)
    loss, grads, g_feats = _head_step(feats, labels, bn, head, rng_drop, p_drop)

    d = ck.params.config.d_model
    g_text = {t: np.zeros(d) for t in texts}
    for e, h, g_f in zip(batch, pairs, g_feats):
        g_h = g_f if ck.compressor is None else compress_backward(h, ck.compressor, g_f)
        g_text[e.review] += g_h[:d]
        g_text[e.sentence] += g_h[d:]
    acc: dict = {}
    for t in texts:
        backward_from_trace(traces[t], g_text[t], ck.params, adapters, acc)
    for name, ad in adapters.items():
        ga, gb = acc.get(name, (np.zeros_like(ad.a), np.zeros_like(ad.b)))
        grads[f"lora.{name}.a"] = ga
        grads[f"lora.{name}.b"] = gb
    return loss, grads


def train_lora(prepared: list[PreparedReview], config: RunConfig,
               base: TrainResult | None = None) -> TrainResult:
    """Head training followed by a LoRA phase of ``config.lora.epochs`` epochs.

    The trace carries the head-phase rows, then ``lora`` rows with eval-mode
    training loss at step 0, every ``trace_every`` steps and the final step.
    """
    base = base or train_head(prepared, config)
    examples = labeled_examples(prepared)
    ck0 = base.checkpoint
    lcfg = config.lora
    adapters = init_adapters(ck0.params.config, config.seed, lcfg.rank, lcfg.alpha,
                             lcfg.dropout, lcfg.targets)
    bn, head = ck0.batchnorm.copy(), ck0.head.copy()
    ck = replace(ck0, batchnorm=bn, head=head, adapters=adapters,
                 config=replace(config, lora=replace(lcfg, enabled=True)))

    seed = config.seed
    rng_shuffle = rng_derive(seed, "shuffle:lora")
    rng_drop = rng_derive(seed, "dropout:lora")
    rng_lora = rng_derive(seed, "dropout:adapters")
    steps_per_epoch = _n_batches(len(examples), config.batch_size)
    total = lcfg.epochs * steps_per_epoch
    schedule = OneCycleSchedule(config.lr, total)
    opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    params, bias = _head_param_views(bn, head)
    for name, ad in adapters.items():
        params[f"lora.{name}.a"] = ad.a
        params[f"lora.{name}.b"] = ad.b

    trace = list(base.trace)

    def record(epoch, step):
        loss, acc = evaluate_loss(examples, ck, adapters)
        trace.append(TraceRow("lora", epoch, step, loss, acc))
        log.info("lora step %d: loss %.6f acc %.3f", step, loss, acc)

    record(0, 0)
    step = 0
    for epoch in range(1, lcfg.epochs + 1):
        for idx in _batches(len(examples), config.batch_size, rng_shuffle):
            batch = [examples[i] for i in idx]
            _, grads = lora_step_grads(batch, ck, adapters, bn, head, rng_drop, rng_lora,
                                       config.dropout)
            adamw_step(params, grads, opt, onecycle_lr(step, schedule), HEAD_NO_DECAY)
            head.b = float(bias[0])
            step += 1
            if step % config.trace_every == 0 or step == total:
                record(epoch, step)
    return TrainResult(ck, trace)
