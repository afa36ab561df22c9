"""Low-rank adapters wrapping frozen projection weights.

Weights follow the ``(out, in)`` convention, so a wrapped projection computes
``x @ W.T + scaling * (drop(x) @ A.T) @ B.T`` with ``scaling = alpha / rank``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import RngStream


@dataclass
class LoraAdapter:
    target: str
    a: np.ndarray  # down-projection, (rank, in)
    b: np.ndarray  # up-projection, (out, rank)
    alpha: float = 32.0
    dropout: float = 0.1

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def init(cls, target: str, in_dim: int, out_dim: int, rank: int, rng: RngStream,
             alpha: float = 32.0, dropout: float = 0.1) -> "LoraAdapter":
        # down-matrix uniform(+-1/sqrt(in)); up-matrix zero so the wrapped layer starts unchanged
        bound = 1.0 / np.sqrt(in_dim)
        a = (rng.uniform((rank, in_dim)) * 2.0 - 1.0) * bound
        return cls(target, a, np.zeros((out_dim, rank)), float(alpha), float(dropout))

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.target, self.a.copy(), self.b.copy(), self.alpha, self.dropout)


def lora_effective(w_base: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    """``W_base + (alpha / r) * B @ A``; the base weight is not modified."""
    w_base = np.asarray(w_base, dtype=np.float64)
    a, b = adapter.a, adapter.b
    if b.shape[1] != a.shape[0] or w_base.shape != (b.shape[0], a.shape[1]):
        raise ShapeError(
            f"adapter {b.shape} @ {a.shape} incompatible with weight {w_base.shape}")
    return w_base + adapter.scaling * (b @ a)
