"""Classic k-means: Lloyd's alternating optimization, k-means++ seeding, and
the exact squared-Frobenius objective.  Serves as baseline, initializer, and
test oracle for the gradient-based solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InputError(ValueError):
    """Raised when inputs violate a precondition (e.g. fewer points than k)."""


@dataclass
class LloydResult:
    centroids: np.ndarray        # k x d
    labels: np.ndarray           # int labels in [0, k)
    objective: float
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list, repr=False)


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    H = np.zeros((labels.shape[0], k))
    H[np.arange(labels.shape[0]), labels] = 1.0
    return H


def assign_step(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels; ties break to the lowest centroid index."""
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if X.shape[1] != M.shape[1]:
        raise InputError(f"dim mismatch: data {X.shape} vs centroids {M.shape}")
    dists = ((X[:, None, :] - M[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(dists, axis=1)


def update_step(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Centroids as assigned-point means; empty clusters reseed to the points
    farthest from their own centroid (distance ties to the highest row index).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    M = np.zeros((k, X.shape[1]))
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts):
        M[j] = X[labels == j].mean(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        dists = ((X - M[labels]) ** 2).sum(axis=1)
        # farthest points first; highest index wins a distance tie
        order = np.lexsort((np.arange(len(X)), dists))[::-1]
        for j, idx in zip(empty, order):
            M[j] = X[idx]
    return M


def kmeans_objective(X: np.ndarray, H: np.ndarray, M: np.ndarray) -> float:
    """Exact ||X - HM||_F^2 for a one-hot assignment matrix H."""
    H = np.asarray(H, dtype=np.float64)
    is_one_hot = (
        np.all((H == 0.0) | (H == 1.0))
        and np.all(H.sum(axis=1) == 1.0)
    )
    if not is_one_hot:
        raise InputError("H must have exactly one 1 per row (one-hot)")
    diff = np.asarray(X, dtype=np.float64) - H @ np.asarray(M, dtype=np.float64)
    return float(np.sum(diff * diff))


def lloyd(X: np.ndarray, init: np.ndarray, max_iter: int = 300,
          tol: float = 0.0) -> LloydResult:
    """Alternate assignment and mean updates until labels stabilize.

    Convergence is exact label stability; ``tol`` is accepted for interface
    compatibility but unused.  The objective is checked non-increasing at
    every iteration.
    """
    del tol
    if max_iter < 1:
        raise InputError(f"max_iter must be >= 1, got {max_iter}")
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(init, dtype=np.float64).copy()
    k = M.shape[0]
    labels = assign_step(X, M)
    trace = [_labelled_objective(X, labels, M)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        M = update_step(X, labels, k)
        new_labels = assign_step(X, M)
        obj = _labelled_objective(X, new_labels, M)
        if obj > trace[-1] + 1e-9:
            raise AssertionError(
                f"objective increased {trace[-1]} -> {obj} at iteration {iterations}"
            )
        trace.append(obj)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
    return LloydResult(
        centroids=M,
        labels=labels,
        objective=kmeans_objective(X, one_hot(labels, k), M),
        iterations=iterations,
        converged=converged,
        objective_trace=trace,
    )


def _labelled_objective(X: np.ndarray, labels: np.ndarray, M: np.ndarray) -> float:
    diff = X - M[labels]
    return float(np.sum(diff * diff))


def kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, the rest D^2-weighted."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise InputError(f"need at least k={k} points, got {n}")
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    min_d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = min_d2.sum()
        if total > 0:
            idx = rng.choice(n, p=min_d2 / total)
        else:
            idx = rng.integers(n)  # all points coincide with chosen centroids
        centroids[j] = X[idx]
        min_d2 = np.minimum(min_d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_fit(X: np.ndarray, k: int, seed: int = 0, restarts: int = 10,
               max_iter: int = 300) -> LloydResult:
    """Best-of-``restarts`` Lloyd's from k-means++ seeds, picked by objective.

    Restart ``r`` draws from ``default_rng([seed, r])`` so other solvers can
    reproduce the identical seeding stream.
    """
    if restarts < 1:
        raise InputError(f"restarts must be >= 1, got {restarts}")
    best: LloydResult | None = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        result = lloyd(X, kmeanspp_init(X, k, rng), max_iter=max_iter)
        if best is None or result.objective < best.objective:
            best = result
    return best
