"""Poincaré-ball compression of pair embeddings.

Pair embeddings are scaled into the unit ball, clustered with normalized
spectral clustering, and every embedding is then described by its hyperbolic
distances to the cluster centroids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidK, OutOfBall, ShapeError
from .numerics import RngStream, jacobi_eigh, rng_derive

MAX_RADIUS = 0.99
FIT_RADIUS = 0.9
SUBSAMPLE_CAP = 512
GRAD_ZERO_DISTANCE = 1e-7


def _acosh1p(t):
    # arcosh(1 + t) for t >= 0
    return np.log1p(t + np.sqrt(t * (t + 2.0)))


def poincare_distance(a, b) -> float:
    """Hyperbolic distance ``arcosh(1 + 2|a-b|^2 / ((1-|a|^2)(1-|b|^2)))``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"point shapes differ: {a.shape} vs {b.shape}")
    na, nb = a @ a, b @ b
    if not (na < 1.0 and nb < 1.0):
        raise OutOfBall("points must lie strictly inside the unit ball")
    diff = a - b
    t = 2.0 * (diff @ diff) / ((1.0 - na) * (1.0 - nb))
    return float(_acosh1p(t))


# --------------------------------------------------------------------------
# scaler

@dataclass(frozen=True)
class BallScaler:
    scale: float
    max_radius: float = MAX_RADIUS

    def project(self, x) -> np.ndarray:
        p = self.scale * np.asarray(x, dtype=np.float64)
        norm = np.linalg.norm(p, axis=-1, keepdims=True)
        over = norm > self.max_radius
        if np.any(over):
            p = np.where(over, p * (self.max_radius / np.where(over, norm, 1.0)), p)
        return p


def fit_ball_scaler(embeddings) -> BallScaler:
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    largest = np.linalg.norm(e, axis=1).max(initial=0.0)
    if largest == 0.0:
        raise DegenerateInput("cannot fit a ball scaler on all-zero embeddings")
    return BallScaler(FIT_RADIUS / largest)


# --------------------------------------------------------------------------
# spectral clustering

def pairwise_sq_dists(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf_affinity(points) -> np.ndarray:
    """Gaussian affinity with the median nonzero pairwise distance as bandwidth."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DegenerateInput("affinity needs at least 2 points")
    sq = pairwise_sq_dists(pts)
    iu = np.triu_indices(len(pts), 1)
    d = np.sqrt(sq[iu])
    d = d[d > 0]
    sigma = float(np.median(d)) if d.size else 1.0
    w = np.exp(-sq / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 0.0)
    return w


def spectral_embed(affinity, k: int) -> np.ndarray:
    """Rows of the ``k`` smallest eigenvectors of ``I - D^-1/2 W D^-1/2``,
    each row rescaled to unit length (zero rows stay zero)."""
    w = np.asarray(affinity, dtype=np.float64)
    n = w.shape[0]
    if k < 2:
        raise InvalidK("spectral embedding needs k >= 2")
    if k > n:
        raise InvalidK(f"k={k} exceeds the number of points ({n})")
    deg = w.sum(axis=1)
    deg = np.where(deg > 0, deg, 1e-12)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    eig = jacobi_eigh(lap)
    u = eig.eigenvectors[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return np.where(norms > 0, u / np.where(norms > 0, norms, 1.0), 0.0)


def _assign(points, means):
    sq = ((points[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(sq, axis=1), sq


def kmeans(points, k: int, rng: RngStream | int, max_iter: int = 100):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(assignments, means)``. An empty cluster is reseeded with the
    point farthest from its current mean; distance ties go to the lowest
    cluster index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 1 or k > n:
        raise InvalidK(f"k={k} must be in [1, {n}]")
    if not isinstance(rng, RngStream):
        rng = rng_derive(int(rng), "cluster")

    means = np.empty((k, pts.shape[1]))
    means[0] = pts[rng.integers(0, n)]
    closest = ((pts - means[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(0, n))
        means[j] = pts[idx]
        closest = np.minimum(closest, ((pts - means[j]) ** 2).sum(axis=1))

    assign = None
    for _ in range(max_iter):
        new_assign, sq = _assign(pts, means)
        own = sq[np.arange(n), new_assign].copy()
        for j in range(k):
            members = new_assign == j
            if np.any(members):
                means[j] = pts[members].mean(axis=0)
            else:
                far = int(np.argmax(own))
                means[j] = pts[far]
                own[far] = -1.0
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, means


# --------------------------------------------------------------------------
# compressor

@dataclass
class PoincareCompressor:
    scaler: BallScaler
    centroids: np.ndarray  # (n_clusters, dim)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


def fit_compressor(pair_embeddings, n_clusters: int = 8, seed: int = 0) -> PoincareCompressor:
    e = np.asarray(pair_embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < max(n_clusters, 2):
        raise DegenerateInput(f"need at least {max(n_clusters, 2)} embeddings to fit "
                              f"{n_clusters} clusters")
    if n_clusters < 2:
        raise InvalidK("n_clusters must be >= 2")
    scaler = fit_ball_scaler(e)
    rng = rng_derive(seed, "cluster")
    if e.shape[0] > SUBSAMPLE_CAP:
        idx = np.sort(rng.choice(e.shape[0], SUBSAMPLE_CAP, replace=False))
        e = e[idx]
    scaled = scaler.project(e)
    coords = spectral_embed(rbf_affinity(scaled), n_clusters)
    assign, _ = kmeans(coords, n_clusters, rng)
    centroids = np.zeros((n_clusters, scaled.shape[1]))
    filled = np.zeros(n_clusters, dtype=bool)
    for j in range(n_clusters):
        if np.any(assign == j):
            centroids[j] = scaled[assign == j].mean(axis=0)
            filled[j] = True
    if not filled.all():
        # degenerate spectral space: fall back to the worst-represented points
        own = ((scaled - centroids[assign]) ** 2).sum(axis=1)
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(own))
            centroids[j] = scaled[far]
            own[far] = -1.0
    centroids = BallScaler(1.0).project(centroids)
    return PoincareCompressor(scaler, centroids)


def _distance_terms(p, centroids):
    pn = p @ p
    cn = (centroids * centroids).sum(axis=1)
    diff = p[None, :] - centroids
    sq = (diff * diff).sum(axis=1)
    alpha = 1.0 - pn
    beta = 1.0 - cn
    t = 2.0 * sq / (alpha * beta)
    return diff, sq, alpha, beta, t


def compress(h_rs, compressor: PoincareCompressor) -> np.ndarray:
    """Distances from the projected pair embedding to every centroid."""
    h = np.asarray(h_rs, dtype=np.float64)
    if h.shape != compressor.centroids.shape[1:]:
        raise ShapeError(f"embedding shape {h.shape} != centroid shape "
                         f"{compressor.centroids.shape[1:]}")
    p = compressor.scaler.project(h)
    *_, t = _distance_terms(p, compressor.centroids)
    return _acosh1p(t)


def compress_backward(h_rs, compressor: PoincareCompressor, upstream) -> np.ndarray:
    """Gradient of ``<upstream, compress(h_rs)>`` w.r.t. ``h_rs`` (centroids fixed)."""
    h = np.asarray(h_rs, dtype=np.float64)
    if h.shape != compressor.centroids.shape[1:]:
        raise ShapeError("embedding does not match centroid dimension")
    g_f = np.asarray(upstream, dtype=np.float64)
    scaler = compressor.scaler
    q = scaler.scale * h
    p = scaler.project(h)
    diff, sq, alpha, beta, t = _distance_terms(p, compressor.centroids)
    dist = _acosh1p(t)
    live = dist >= GRAD_ZERO_DISTANCE
    # d arcosh(1+t)/dt = 1/sqrt(t(t+2))
    coef = np.where(live, g_f / np.sqrt(np.where(live, t * (t + 2.0), 1.0)), 0.0)
    dt_dp = (4.0 / (alpha * beta))[:, None] * diff + (4.0 * sq / (alpha * alpha * beta))[:, None] * p
    g_p = coef @ dt_dp

    qn = np.linalg.norm(q)
    if qn > scaler.max_radius:
        qhat = q / qn
        g_q = (scaler.max_radius / qn) * (g_p - qhat * (qhat @ g_p))
    else:
        g_q = g_p
    return scaler.scale * g_q
