"""Selective state-space encoder.

A stack of minimal Mamba-style layers over word embeddings:

    u     = x W_in^T                      (optionally + LoRA path)
    delta = softplus(u W_delta^T + b_delta)
    B_k   = u W_B^T,  C_k = u W_C^T
    h_k   = exp(delta a) h_{k-1} + ((exp(delta a) - 1) / a) B_k u_k
    y_k   = sum_n C_k[n] h_k[:, n]
    out   = y W_out^T + x                 (optionally + LoRA path)

``A`` is diagonal per channel, initialised from the HiPPO-LegS diagonal.
The backward pass keeps only chunk-boundary states from the forward pass and
recomputes the states inside each chunk while walking backwards.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (EmptyCorpus, InternalError, InvalidSize, NoTrainableParams,
                     ShapeError, UnstableA)
from .lora import LoraAdapter
from .numerics import RngStream, rng_derive, sigmoid, softplus

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Set only by the selfcheck fault-injection path; flips the sign of the ZOH input gain.
_FAULT_FLIP_INPUT_GAIN = False


class EmptyTextWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# vocabulary

@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.index.get(token, UNK_ID)


def build_vocab(texts) -> Vocabulary:
    """Word-level vocabulary in first-occurrence order."""
    texts = list(texts)
    if not texts:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    tokens = [PAD_TOKEN, UNK_TOKEN]
    seen = set(tokens)
    for text in texts:
        for tok in text.split():
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    return Vocabulary(tokens)


def tokenize(text: str, vocab: Vocabulary, max_len: int = 128) -> np.ndarray:
    ids = [vocab[tok] for tok in text.split()[:max_len]]
    return np.asarray(ids, dtype=np.int64)


# --------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    expand: int = 2
    d_state: int = 16
    n_layers: int = 2
    max_len: int = 128
    delta_taylor_threshold: float = 1e-4
    pooling: str = "mean"      # "mean" over positions, or "last" position
    chunk_size: int = 32       # backward recomputation chunk
    scan: str = "sequential"   # forward scan: "sequential" or "parallel"

    def __post_init__(self):
        for name in ("d_model", "expand", "d_state", "n_layers", "max_len", "chunk_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.pooling not in ("mean", "last"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.scan not in ("sequential", "parallel"):
            raise ValueError(f"unknown scan {self.scan!r}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


@dataclass
class LayerParams:
    w_in: np.ndarray     # (d_inner, d_model)
    w_delta: np.ndarray  # (d_inner, d_inner)
    b_delta: np.ndarray  # (d_inner,)
    w_b: np.ndarray      # (d_state, d_inner)
    w_c: np.ndarray      # (d_state, d_inner)
    a: np.ndarray        # (d_inner, d_state), strictly negative
    w_out: np.ndarray    # (d_model, d_inner)


LAYER_FIELDS = ("w_in", "w_delta", "b_delta", "w_b", "w_c", "a", "w_out")


@dataclass
class MambaParams:
    config: EncoderConfig
    embedding: np.ndarray  # (|V|, d_model)
    layers: list[LayerParams]


def hippo_legs_matrix(n: int) -> np.ndarray:
    """Dense HiPPO-LegS state matrix (0-indexed, lower triangular)."""
    if n < 1:
        raise InvalidSize(f"HiPPO size must be >= 1, got {n}")
    q = np.sqrt(2.0 * np.arange(n) + 1.0)
    m = -np.tril(np.outer(q, q), -1)
    m[np.diag_indices(n)] = -(np.arange(n) + 1.0)
    return m


def init_params(config: EncoderConfig, vocab_size: int, seed: int) -> MambaParams:
    rng = rng_derive(seed, "init")
    d, di, n = config.d_model, config.d_inner, config.d_state
    embedding = rng.normal((vocab_size, d))
    a_row = np.diag(hippo_legs_matrix(n)).copy()
    # softplus(b) = 0.01 at zero input
    b0 = float(np.log(np.expm1(0.01)))
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerParams(
            w_in=rng.normal((di, d), 1.0 / np.sqrt(d)),
            w_delta=rng.normal((di, di), 1.0 / np.sqrt(di)),
            b_delta=np.full(di, b0),
            w_b=rng.normal((n, di), 1.0 / np.sqrt(di)),
            w_c=rng.normal((n, di), 1.0 / np.sqrt(di)),
            a=np.tile(a_row, (di, 1)),
            w_out=rng.normal((d, di), 1.0 / np.sqrt(di)),
        ))
    return MambaParams(config, embedding, layers)


def adapter_shapes(config: EncoderConfig) -> dict[str, tuple[int, int]]:
    """``name -> (in_dim, out_dim)`` for every LoRA-wrappable projection."""
    shapes = {}
    for layer in range(config.n_layers):
        shapes[f"{layer}.in_proj"] = (config.d_model, config.d_inner)
        shapes[f"{layer}.out_proj"] = (config.d_inner, config.d_model)
    return shapes


def init_adapters(config: EncoderConfig, seed: int, rank: int = 4, alpha: float = 32.0,
                  dropout: float = 0.1, targets=("in_proj", "out_proj")) -> dict[str, LoraAdapter]:
    rng = rng_derive(seed, "init:lora")
    adapters = {}
    for name, (i, o) in adapter_shapes(config).items():
        if name.split(".", 1)[1] in targets:
            adapters[name] = LoraAdapter.init(name, i, o, rank, rng, alpha, dropout)
    return adapters


# --------------------------------------------------------------------------
# discretization

def _zoh_factors(delta, a, threshold: float = 1e-4):
    """``(a_bar, gain, dgain_ddelta)`` with ``b_bar = gain * b_in``."""
    z = delta * a
    a_bar = np.exp(z)
    small = np.abs(z) < threshold
    safe_a = np.where(small, -1.0, a)
    exact = np.expm1(z) / safe_a
    taylor = delta * (1.0 + z / 2.0 + z * z / 6.0)
    gain = np.where(small, taylor, exact)
    dgain = np.where(small, 1.0 + z + z * z / 2.0, a_bar)
    if _FAULT_FLIP_INPUT_GAIN:
        gain, dgain = -gain, -dgain
    return a_bar, gain, dgain


def discretize(delta, a, b_in, threshold: float = 1e-4):
    """Zero-order-hold discretization for a diagonal state matrix.

    Returns ``(a_bar, b_bar)``. Below ``|delta * a| < threshold`` the input
    gain uses its third-order Taylor expansion to avoid 0/0.
    """
    delta = np.asarray(delta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if np.any(~(a < 0)):
        raise UnstableA("state matrix entries must be strictly negative")
    if np.any(~(delta > 0)):
        raise ValueError("delta must be positive")
    a_bar, gain, _ = _zoh_factors(delta, a, threshold)
    b_bar = gain * b_in
    if np.ndim(a_bar) == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


# --------------------------------------------------------------------------
# scans

def _check_scan_inputs(a_bars, drive, c):
    a_bars = np.asarray(a_bars, dtype=np.float64)
    drive = np.asarray(drive, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if a_bars.shape != drive.shape or a_bars.shape[0] != c.shape[0]:
        raise ShapeError(f"scan inputs disagree: {a_bars.shape}, {drive.shape}, {c.shape}")
    if a_bars.ndim == 3 and c.shape[1:] != a_bars.shape[2:]:
        raise ShapeError(f"C shape {c.shape} does not match state shape {a_bars.shape}")
    return a_bars, drive, c


def _readout(h, c):
    if h.ndim == c.ndim:
        return h * c
    return np.einsum("tdn,tn->td", h, c)


def selective_scan_seq(a_bars, drive, c, return_states: bool = False):
    """Sequential evaluation of ``h_k = a_k h_{k-1} + drive_k``, ``y_k = C_k h_k``.

    Shapes: ``(T,)`` for the scalar case, or ``(T, D, N)`` with ``c`` of
    shape ``(T, N)``.
    """
    a_bars, drive, c = _check_scan_inputs(a_bars, drive, c)
    h = np.zeros(a_bars.shape[1:])
    states = np.empty_like(drive)
    for t in range(a_bars.shape[0]):
        h = a_bars[t] * h + drive[t]
        states[t] = h
    y = _readout(states, c)
    return (y, states) if return_states else y


def scan_combine(first, second):
    """Associative operator on affine maps ``h -> a h + b``: apply ``first`` then ``second``."""
    a1, b1 = first
    a2, b2 = second
    return a1 * a2, a2 * b1 + b2


SCAN_IDENTITY = (1.0, 0.0)


def _blelloch_states(a_bars, drive):
    t_len = a_bars.shape[0]
    n = 1
    while n < t_len:
        n *= 2
    a = np.ones((n,) + a_bars.shape[1:])
    b = np.zeros((n,) + a_bars.shape[1:])
    a[:t_len] = a_bars
    b[:t_len] = drive

    d = 1
    while d < n:  # up-sweep: right node <- left (+) right
        r = np.arange(2 * d - 1, n, 2 * d)
        l = r - d
        b[r] = a[r] * b[l] + b[r]
        a[r] = a[l] * a[r]
        d *= 2

    a[n - 1], b[n - 1] = 1.0, 0.0
    d = n // 2
    while d >= 1:  # down-sweep: left <- prefix, right <- prefix (+) left-sum
        r = np.arange(2 * d - 1, n, 2 * d)
        l = r - d
        la, lb = a[l].copy(), b[l].copy()
        a[l], b[l] = a[r], b[r]
        b[r] = la * b[r] + lb
        a[r] = a[r] * la
        d //= 2

    # exclusive prefix (+) own element; h_0 = 0 so the state is the offset
    return a_bars * b[:t_len] + drive


def selective_scan_parallel(a_bars, drive, c, return_states: bool = False):
    """Same contract as :func:`selective_scan_seq`, via a work-efficient
    up-sweep/down-sweep prefix scan over :func:`scan_combine`."""
    a_bars, drive, c = _check_scan_inputs(a_bars, drive, c)
    if a_bars.shape[0] == 0:
        states = np.zeros_like(drive)
    else:
        states = _blelloch_states(a_bars, drive)
    y = _readout(states, c)
    return (y, states) if return_states else y


# --------------------------------------------------------------------------
# forward

@dataclass
class _LayerCache:
    x: np.ndarray
    u: np.ndarray
    pre: np.ndarray
    b_k: np.ndarray
    c_k: np.ndarray
    a_bar: np.ndarray
    gain: np.ndarray
    dgain: np.ndarray
    y: np.ndarray
    in_mask: np.ndarray | None
    out_mask: np.ndarray | None
    in_low: np.ndarray | None   # drop(x) @ A_in^T
    out_low: np.ndarray | None  # drop(y) @ A_out^T
    checkpoints: list[np.ndarray]  # states at chunk starts
    states: np.ndarray | None      # full states, only in stored mode


@dataclass
class EncodeTrace:
    """Everything the backward pass needs except the scan states."""
    length: int
    layers: list[_LayerCache]
    output: np.ndarray


def _project(x, w, adapter, mask):
    out = x @ w.T
    if adapter is None:
        return out, None
    xd = x if mask is None else x * mask
    low = xd @ adapter.a.T
    return out + adapter.scaling * (low @ adapter.b.T), low


def _dropout_mask(shape, p, rng):
    if p <= 0.0:
        return None
    return (rng.uniform(shape) >= p) / (1.0 - p)


def _layer_forward(x, lp: LayerParams, cfg: EncoderConfig, ad_in, ad_out, rng, keep: str):
    in_mask = _dropout_mask(x.shape, ad_in.dropout, rng) if (ad_in and rng) else None
    u, in_low = _project(x, lp.w_in, ad_in, in_mask)
    pre = u @ lp.w_delta.T + lp.b_delta
    delta = softplus(pre)
    b_k = u @ lp.w_b.T
    c_k = u @ lp.w_c.T
    a_bar, gain, dgain = _zoh_factors(delta[:, :, None], lp.a[None], cfg.delta_taylor_threshold)
    drive = gain * b_k[:, None, :] * u[:, :, None]

    t_len = x.shape[0]
    checkpoints, states = [], None
    if cfg.scan == "parallel" and keep == "none":
        y = selective_scan_parallel(a_bar, drive, c_k)
    else:
        y = np.empty((t_len, lp.a.shape[0]))
        if keep == "all":
            states = np.empty_like(drive)
        h = np.zeros(lp.a.shape)
        for t in range(t_len):
            if t % cfg.chunk_size == 0:
                checkpoints.append(h)
            h = a_bar[t] * h + drive[t]
            y[t] = h @ c_k[t]
            if states is not None:
                states[t] = h

    out_mask = _dropout_mask(y.shape, ad_out.dropout, rng) if (ad_out and rng) else None
    proj, out_low = _project(y, lp.w_out, ad_out, out_mask)
    out = proj + x
    cache = None
    if keep != "none":
        cache = _LayerCache(x, u, pre, b_k, c_k, a_bar, gain, dgain, y, in_mask, out_mask,
                            in_low, out_low, checkpoints, states)
    return out, cache


def _embed(text, vocab, params):
    ids = tokenize(text, vocab, params.config.max_len)
    if ids.size and (ids.max() >= params.embedding.shape[0] or ids.min() < 0):
        raise InternalError("token id outside the embedding table")
    return params.embedding[ids]


def _pool(out, pooling):
    if pooling == "last":
        return out[-1].copy()
    return out.sum(axis=0) / out.shape[0]


def encode_forward(text: str, vocab: Vocabulary, params: MambaParams,
                   adapters: dict[str, LoraAdapter] | None = None,
                   rng: RngStream | None = None, keep: str = "chunks"):
    """Forward pass returning ``(embedding, trace)``.

    ``keep="chunks"`` retains only chunk-boundary scan states; ``"all"``
    retains every state (reference mode for checking the recomputation);
    ``"none"`` keeps no trace. Passing ``rng`` enables adapter dropout.
    """
    cfg = params.config
    adapters = adapters or {}
    x = _embed(text, vocab, params)
    if x.shape[0] == 0:
        warnings.warn("empty text encodes to the zero vector", EmptyTextWarning, stacklevel=2)
        return np.zeros(cfg.d_model), None
    caches = []
    for i, lp in enumerate(params.layers):
        x, cache = _layer_forward(x, lp, cfg, adapters.get(f"{i}.in_proj"),
                                  adapters.get(f"{i}.out_proj"), rng, keep)
        caches.append(cache)
    emb = _pool(x, cfg.pooling)
    trace = EncodeTrace(x.shape[0], caches, x) if keep != "none" else None
    return emb, trace


def encode(text: str, vocab: Vocabulary, params: MambaParams,
           adapters: dict[str, LoraAdapter] | None = None,
           rng: RngStream | None = None) -> np.ndarray:
    """Mean-pooled final-layer representation of ``text`` (length ``d_model``)."""
    emb, _ = encode_forward(text, vocab, params, adapters, rng, keep="none")
    return emb


def encode_pair(review: str, sentence: str, vocab: Vocabulary, params: MambaParams,
                adapters=None, rng=None) -> np.ndarray:
    return np.concatenate([encode(review, vocab, params, adapters, rng),
                           encode(sentence, vocab, params, adapters, rng)])


# --------------------------------------------------------------------------
# backward

def _project_backward(g, x, w, adapter, mask, low, grads, name):
    gx = g @ w
    if adapter is None:
        return gx
    s = adapter.scaling
    g_low = s * (g @ adapter.b)
    xd = x if mask is None else x * mask
    ga, gb = grads.setdefault(name, [np.zeros_like(adapter.a), np.zeros_like(adapter.b)])
    gb += s * (g.T @ low)
    ga += g_low.T @ xd
    g_xd = g_low @ adapter.a
    gx += g_xd if mask is None else g_xd * mask
    return gx


def _scan_backward(cache: _LayerCache, gy, chunk):
    """Reverse recurrence; returns gradients w.r.t. a_bar, drive and C."""
    a_bar = cache.a_bar
    drive = cache.gain * cache.b_k[:, None, :] * cache.u[:, :, None]
    t_len = a_bar.shape[0]
    g_abar = np.empty_like(a_bar)
    g_drive = np.empty_like(a_bar)
    g_c = np.empty_like(cache.c_k)
    carry = np.zeros(a_bar.shape[1:])
    for j in reversed(range(len(cache.checkpoints))):
        start, stop = j * chunk, min((j + 1) * chunk, t_len)
        h0 = cache.checkpoints[j]
        if cache.states is not None:
            hs = cache.states[start:stop]
        else:
            hs = np.empty((stop - start,) + h0.shape)
            h = h0
            for t in range(start, stop):
                h = a_bar[t] * h + drive[t]
                hs[t - start] = h
        for t in reversed(range(start, stop)):
            h_t = hs[t - start]
            h_prev = hs[t - start - 1] if t > start else h0
            gh = np.outer(gy[t], cache.c_k[t]) + carry
            g_abar[t] = gh * h_prev
            g_drive[t] = gh
            g_c[t] = gy[t] @ h_t
            carry = a_bar[t] * gh
    return g_abar, g_drive, g_c


def _layer_backward(g_out, cache: _LayerCache, lp: LayerParams, cfg, ad_in, ad_out, grads, i):
    g_x = g_out.copy()
    g_y = _project_backward(g_out, cache.y, lp.w_out, ad_out, cache.out_mask, cache.out_low,
                            grads, f"{i}.out_proj")
    g_abar, g_drive, g_c = _scan_backward(cache, g_y, cfg.chunk_size)

    u, b_k = cache.u, cache.b_k
    g_gain = g_drive * b_k[:, None, :] * u[:, :, None]
    g_bk = np.einsum("tdn,tdn,td->tn", g_drive, cache.gain, u)
    g_u = np.einsum("tdn,tdn,tn->td", g_drive, cache.gain, b_k)
    g_delta = (np.einsum("tdn,tdn,dn->td", g_abar, cache.a_bar, lp.a)
               + np.einsum("tdn,tdn->td", g_gain, cache.dgain))
    g_pre = g_delta * sigmoid(cache.pre)
    g_u += g_pre @ lp.w_delta + g_bk @ lp.w_b + g_c @ lp.w_c
    g_x += _project_backward(g_u, cache.x, lp.w_in, ad_in, cache.in_mask, cache.in_low,
                             grads, f"{i}.in_proj")
    return g_x


def backward_from_trace(trace: EncodeTrace, g_emb, params: MambaParams,
                        adapters: dict[str, LoraAdapter], grads=None) -> dict:
    """Accumulate adapter gradients for one encoded text into ``grads``
    (``name -> [grad_a, grad_b]``)."""
    grads = {} if grads is None else grads
    if trace is None:
        return grads
    cfg = params.config
    g_emb = np.asarray(g_emb, dtype=np.float64)
    if g_emb.shape != (cfg.d_model,):
        raise ShapeError(f"upstream gradient must have shape ({cfg.d_model},)")
    g = np.zeros_like(trace.output)
    if cfg.pooling == "last":
        g[-1] = g_emb
    else:
        g[:] = g_emb / trace.length
    for i in reversed(range(len(params.layers))):
        g = _layer_backward(g, trace.layers[i], params.layers[i], cfg,
                            adapters.get(f"{i}.in_proj"), adapters.get(f"{i}.out_proj"), grads, i)
    return grads


def encode_backward(texts, upstream, vocab: Vocabulary, params: MambaParams,
                    adapters: dict[str, LoraAdapter] | None, rng: RngStream | None = None,
                    recompute: bool = True) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``sum_i <upstream_i, encode(texts_i)>`` w.r.t. the adapter
    matrices only. Base weights are treated as frozen constants.

    With ``recompute=True`` (default) scan states are rebuilt chunk by chunk
    during the backward pass; ``False`` stores all of them (reference path).
    """
    if not adapters:
        raise NoTrainableParams("encode_backward needs at least one adapter")
    upstream = np.asarray(upstream, dtype=np.float64)
    if len(texts) != len(upstream):
        raise ShapeError("one upstream gradient per text is required")
    grads: dict = {}
    keep = "chunks" if recompute else "all"
    for text, g in zip(texts, upstream):
        _, trace = encode_forward(text, vocab, params, adapters, rng, keep=keep)
        backward_from_trace(trace, g, params, adapters, grads)
    out = {}
    for name, ad in adapters.items():
        ga, gb = grads.get(name, (np.zeros_like(ad.a), np.zeros_like(ad.b)))
        out[name] = (ga, gb)
    return out


def with_config(params: MambaParams, **changes) -> MambaParams:
    return MambaParams(replace(params.config, **changes), params.embedding, params.layers)
