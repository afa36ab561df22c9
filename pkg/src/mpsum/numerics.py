"""Numeric substrate: matrix validation, a Jacobi eigensolver, labeled RNG
streams and overflow-safe scalar functions.

Dense matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix`
enforces the shape/finiteness contract at module boundaries.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidMatrix, NoConvergence

__all__ = [
    "as_matrix",
    "EigenDecomposition",
    "jacobi_eigh",
    "RngStream",
    "rng_derive",
    "softplus",
    "sigmoid",
    "arcosh",
    "artanh",
]


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidMatrix(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix has non-finite entries")
    return a


# --------------------------------------------------------------------------
# eigensolver

@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # column j pairs with eigenvalues[j]
    sweeps: int


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair schedule covering every (p, q) once per sweep.

    Each round is a set of disjoint index pairs, so the rotations within a
    round commute and can be applied together.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _mix_rows(a, p, q, c, s):
    rp, rq = a[p], a[q]
    a[p] = c[:, None] * rp - s[:, None] * rq
    a[q] = s[:, None] * rp + c[:, None] * rq
    return a


def jacobi_eigh(m, max_sweeps: int = 100, tol: float = 1e-12) -> EigenDecomposition:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Uses the round-robin (parallel) cyclic ordering. Stops once the
    off-diagonal Frobenius norm is at most ``tol * ||M||_F``.
    """
    a = as_matrix(m).copy()
    n, cols = a.shape
    if n != cols:
        raise InvalidMatrix(f"matrix must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise InvalidMatrix("matrix is not symmetric within 1e-12")
    a = 0.5 * (a + a.T)
    vt = np.eye(n)  # rows are eigenvectors
    norm = np.linalg.norm(a)
    if n == 1 or norm == 0.0:
        return EigenDecomposition(np.diag(a).copy(), vt, 0)

    rounds = _round_robin(n)
    eye_mask = np.eye(n, dtype=bool)
    threshold = tol * norm
    for sweep in range(1, max_sweeps + 1):
        for p, q in rounds:
            apq = a[p, q]
            if not np.any(apq):
                continue
            app = a[p, p]
            aqq = a[q, q]
            nz = apq != 0.0
            safe = np.where(nz, apq, 1.0)
            # tiny apq overflows theta to inf; the big branch below handles it
            with np.errstate(over="ignore"):
                theta = (aqq - app) / (2.0 * safe)
            big = np.abs(theta) > 1e150
            theta_c = np.where(big, 1.0, theta)
            t = np.sign(theta_c) / (np.abs(theta_c) + np.sqrt(theta_c * theta_c + 1.0))
            # |theta| huge: t ~ 1/(2 theta), avoids overflow in theta^2
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            # A <- J^T A J as two row mixes: rows of A, then rows of (J^T A)^T
            a = _mix_rows(a, p, q, c, s)
            a = _mix_rows(np.ascontiguousarray(a.T), p, q, c, s)
            a[p, q] = 0.0
            a[q, p] = 0.0
            vt = _mix_rows(vt, p, q, c, s)

        off = np.linalg.norm(a[~eye_mask])
        if off <= threshold:
            w = np.diag(a).copy()
            order = np.argsort(w, kind="stable")
            return EigenDecomposition(w[order], np.ascontiguousarray(vt[order].T), sweep)
    raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")


# --------------------------------------------------------------------------
# random streams

class RngStream:
    """Counter-based (Philox) generator keyed by ``(master_seed, label)``.

    Distinct labels give independent streams, so adding a new consumer never
    shifts the draws seen by an existing one.
    """

    def __init__(self, master_seed: int, label: str):
        self.master_seed = int(master_seed)
        self.label = label
        digest = hashlib.sha256(f"{self.master_seed}\x1f{label}".encode()).digest()
        key = int.from_bytes(digest[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size) * scale

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def child(self, label: str) -> "RngStream":
        return RngStream(self.master_seed, f"{self.label}/{label}")

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, label={self.label!r})"


def rng_derive(master_seed: int, label: str) -> RngStream:
    return RngStream(master_seed, label)


# --------------------------------------------------------------------------
# scalar functions (all accept scalars or arrays)

def softplus(x):
    """log(1 + e^x) without overflow."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def arcosh(x):
    """ln(x + sqrt(x^2 - 1)), evaluated as log1p for accuracy near 1."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x >= 1.0)):
        raise DomainError("arcosh requires x >= 1")
    t = x - 1.0
    out = np.log1p(t + np.sqrt(t * (t + 2.0)))
    return out if out.ndim else float(out)


def artanh(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(np.abs(x) < 1.0)):
        raise DomainError("artanh requires |x| < 1")
    out = np.arctanh(x)
    return out if out.ndim else float(out)
