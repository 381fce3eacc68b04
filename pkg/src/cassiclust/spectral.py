"""Normalized spectral clustering (Ng-Jordan-Weiss) with seeded k-means."""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import ValidationError
from .rng import stream

DEGREE_FLOOR = 1e-12
MAX_LLOYD = 300
MOVE_TOL = 1e-9


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # 1..k
    k: int
    inertia: float
    seed: int

    def __post_init__(self):
        present = np.unique(self.labels)
        if present.size != self.k or present[0] != 1 or present[-1] != self.k:
            raise ValidationError(f"labels must use every cluster 1..{self.k}")


def normalized_laplacian(w):
    """I - D^{-1/2} W D^{-1/2}; zero degrees are floored at 1e-12."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError("affinity must be square")
    deg = np.maximum(w.sum(axis=1), DEGREE_FLOOR)
    s = 1.0 / np.sqrt(deg)
    lap = np.eye(w.shape[0]) - s[:, None] * w * s[None, :]
    return 0.5 * (lap + lap.T)


def spectral_embed(lap, k):
    """Eigenvectors of the k smallest eigenvalues, rows scaled to unit norm."""
    P = lap.shape[0]
    if not 1 <= k <= P:
        raise ValidationError(f"need 1 <= k <= {P}, got {k}")
    try:
        _, vecs = eigh(lap, subset_by_index=[0, k - 1])
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"eigensolver failed: {exc}") from exc
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)


def _sq_dist(x, centers):
    d = (np.square(x).sum(1)[:, None] - 2.0 * x @ centers.T
         + np.square(centers).sum(1)[None, :])
    return np.maximum(d, 0.0)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.square(x - centers[0]).sum(1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0.0, total), side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[i] = x[idx]
        closest = np.minimum(closest, np.square(x - centers[i]).sum(1))
    return centers


def lloyd(x, centers, max_iter=MAX_LLOYD, tol=MOVE_TOL):
    """Lloyd iterations; returns (assignment 0..k-1, centers, inertia history).

    An emptied cluster is re-seeded at the point farthest from its centre.
    """
    k = centers.shape[0]
    history = []
    for _ in range(max_iter):
        d = _sq_dist(x, centers)
        assign = d.argmin(axis=1)
        history.append(float(d[np.arange(len(x)), assign].sum()))
        new = centers.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        empty = [j for j in range(k) if not (assign == j).any()]
        for j in empty:
            far = int(d[np.arange(len(x)), assign].argmax())
            new[j] = x[far]
            assign[far] = j
        move = np.sqrt(np.square(new - centers).sum(1)).max()
        centers = new
        if move < tol and not empty:
            break
    d = _sq_dist(x, centers)
    assign = d.argmin(axis=1)
    history.append(float(d[np.arange(len(x)), assign].sum()))
    _fill_empty(assign, d, k)
    return assign, centers, history


def _fill_empty(assign, d, k):
    """Give each empty cluster the worst-fit point of a cluster with spares.

    Only needed with repeated points, where distinct centres can coincide.
    """
    for j in range(k):
        if (assign == j).any():
            continue
        counts = np.bincount(assign, minlength=k)
        movable = counts[assign] > 1
        fit = np.where(movable, d[np.arange(len(assign)), assign], -1.0)
        assign[int(fit.argmax())] = j


def kmeans(points, k, seed=0, restarts=20) -> ClusterAssignment:
    """k-means++ seeding and Lloyd refinement; best inertia over restarts.

    Restart r draws from its own named stream, so results depend only on
    ``(seed, r)``. Ties between restarts keep the earliest.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or not 1 <= k <= x.shape[0]:
        raise ValidationError(f"need 1 <= k <= {x.shape[0]} points, got k={k}")
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        rng = stream(seed, "kmeans", r)
        assign, _, hist = lloyd(x, _kmeans_pp(x, k, rng))
        if best is None or hist[-1] < best[1]:
            best = (assign, hist[-1])
    assign, inertia = best
    return ClusterAssignment(_canonical(assign, k) + 1, k, inertia, seed)


def _canonical(assign, k):
    """Relabel so clusters are numbered by first appearance."""
    order = {}
    for a in assign:
        if a not in order:
            order[a] = len(order)
    for a in range(k):
        order.setdefault(a, len(order))
    return np.array([order[a] for a in assign], dtype=np.int64)


def cluster(w, k, seed=0, restarts=20) -> ClusterAssignment:
    emb = spectral_embed(normalized_laplacian(w), k)
    return kmeans(emb, k, seed=seed, restarts=restarts)
