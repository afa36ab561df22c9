"""Relevance head: batch norm, dropout, a linear scorer, BCE loss, AdamW and
the one-cycle learning-rate schedule. Every forward op has a matching
backward so the head can be trained without an autodiff framework."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, InvalidLabel, InvalidStep, ShapeError
from .lora import lora_effective  # noqa: F401  (re-exported: head-side view of LoRA)
from .numerics import RngStream, sigmoid


# --------------------------------------------------------------------------
# batch norm

@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, n: int) -> "BatchNormState":
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.gamma.copy(), self.beta.copy(), self.running_mean.copy(),
                              self.running_var.copy(), self.momentum, self.eps)


@dataclass
class _BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def batchnorm_forward(x, state: BatchNormState, train: bool, update_stats: bool = True):
    """Returns ``(out, cache)``; ``cache`` is None in eval mode.

    Train mode normalizes with biased batch statistics and (unless
    ``update_stats`` is False) moves the running statistics by ``momentum``.
    Both the normalization and the running variance use the biased variance.
    """
    x = np.asarray(x, dtype=np.float64)
    if train:
        m = x.shape[0]
        if m < 2:
            raise BatchTooSmall("batch norm in train mode needs at least 2 rows")
        mu = x.mean(axis=0)
        var = ((x - mu) ** 2).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mu) * inv_std
        if update_stats:
            mom = state.momentum
            state.running_mean = (1 - mom) * state.running_mean + mom * mu
            state.running_var = (1 - mom) * state.running_var + mom * var
        return xhat * state.gamma + state.beta, _BNCache(xhat, inv_std, state.gamma)
    xhat = (x - state.running_mean) / np.sqrt(state.running_var + state.eps)
    return xhat * state.gamma + state.beta, None


def batchnorm_backward(g_out, cache: _BNCache):
    """Gradients ``(g_x, g_gamma, g_beta)`` for a train-mode forward."""
    g_beta = g_out.sum(axis=0)
    g_gamma = (g_out * cache.xhat).sum(axis=0)
    g_xhat = g_out * cache.gamma
    m = g_out.shape[0]
    g_x = (cache.inv_std / m) * (m * g_xhat - g_xhat.sum(axis=0)
                                 - cache.xhat * (g_xhat * cache.xhat).sum(axis=0))
    return g_x, g_gamma, g_beta


# --------------------------------------------------------------------------
# dropout, linear, loss

def dropout(x, p: float, rng: RngStream | None, train: bool):
    """Inverted dropout. Returns ``(out, mask)``; mask is None when inactive."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if not train or p == 0.0:
        return x, None
    mask = (rng.uniform(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


@dataclass
class LinearHead:
    w: np.ndarray
    b: float = 0.0

    @classmethod
    def init(cls, n: int, rng: RngStream) -> "LinearHead":
        bound = 1.0 / math.sqrt(n)
        w = (rng.uniform(n) * 2.0 - 1.0) * bound
        b = float((rng.uniform() * 2.0 - 1.0) * bound)
        return cls(w, b)

    def copy(self) -> "LinearHead":
        return LinearHead(self.w.copy(), float(self.b))


def linear_forward(h, head: LinearHead):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != head.w.shape[0]:
        raise ShapeError(f"input width {h.shape[-1]} != head width {head.w.shape[0]}")
    y = h @ head.w + head.b
    return float(y) if np.ndim(y) == 0 else y


def bce_loss(logits, labels):
    """Mean binary cross-entropy on logits and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError("logits and labels differ in length")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidLabel("labels must be 0 or 1")
    # log(1 + e^z) - y z, written to avoid overflow
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    return float(per.sum() / n), (sigmoid(z) - y) / n


# --------------------------------------------------------------------------
# optimizer and schedule

@dataclass
class OptimizerState:
    lr: float = 2e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.5
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr_t: float | None = None,
               no_decay: frozenset | set = frozenset()) -> dict:
    """One AdamW update, in place on the arrays of ``params``.

    Decoupled decay ``w <- w (1 - lr_t * weight_decay)`` is applied after the
    Adam term, to every parameter not named in ``no_decay``.
    """
    lr_t = state.lr if lr_t is None else lr_t
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, w in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and name not in no_decay:
            w *= 1.0 - lr_t * state.weight_decay
    return params


@dataclass(frozen=True)
class OneCycleSchedule:
    max_lr: float
    total_steps: int
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.initial_lr / self.final_div_factor

    @property
    def peak_step(self) -> int:
        return max(1, min(self.total_steps, round(self.pct_start * self.total_steps)))


def _cos_anneal(start, end, frac):
    return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * frac))


def onecycle_lr(step: int, schedule: OneCycleSchedule) -> float:
    """Cosine warm-up to ``max_lr`` then cosine decay to ``max_lr / (div * final_div)``."""
    if not 0 <= step <= schedule.total_steps:
        raise InvalidStep(f"step {step} outside [0, {schedule.total_steps}]")
    peak = schedule.peak_step
    if step <= peak:
        return _cos_anneal(schedule.initial_lr, schedule.max_lr, step / peak)
    rest = schedule.total_steps - peak
    return _cos_anneal(schedule.max_lr, schedule.final_lr, (step - peak) / rest)
