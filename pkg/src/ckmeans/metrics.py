"""External clustering evaluation against ground-truth classes: normalized
mutual information, adjusted Rand index, and cluster purity (reported as ACC).
All three operate on a classes-by-clusters contingency table.
"""

from __future__ import annotations

import numpy as np


class MetricsError(ValueError):
    """Raised for invalid label vectors or tables."""


def contingency(true_labels, pred_labels) -> np.ndarray:
    """counts[c, j] = number of points with true class c and predicted cluster j."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise MetricsError(
            f"label vectors must be equal-length 1-D, got {t.shape} and {p.shape}")
    if t.size == 0:
        raise MetricsError("label vectors must be non-empty")
    if t.min() < 0 or p.min() < 0:
        raise MetricsError("labels must be non-negative integers")
    table = np.zeros((t.max() + 1, p.max() + 1), dtype=np.int64)
    np.add.at(table, (t, p), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    pos = counts[counts > 0] / n
    return float(-(pos * np.log(pos)).sum())


def nmi(table: np.ndarray, normalization: str = "geometric") -> float:
    """Mutual information over the normalizer; 0*log(0) taken as 0.

    Both marginal entropies zero (single class, single cluster) scores 1.0;
    exactly one zero scores 0.0.  ``normalization`` is "geometric" (default)
    or "max".
    """
    table = np.asarray(table, dtype=np.float64)
    n = int(table.sum())
    if n < 1:
        raise MetricsError("table must contain at least one point")
    row = table.sum(axis=1)
    col = table.sum(axis=0)
    h_true = _entropy(row, n)
    h_pred = _entropy(col, n)
    if h_true == 0.0 and h_pred == 0.0:
        return 1.0
    if h_true == 0.0 or h_pred == 0.0:
        return 0.0
    nz = table > 0
    p_joint = table[nz] / n
    outer = np.outer(row, col)[nz] / (n * n)
    mutual_info = float((p_joint * np.log(p_joint / outer)).sum())
    if normalization == "geometric":
        denom = np.sqrt(h_true * h_pred)
    elif normalization == "max":
        denom = max(h_true, h_pred)
    else:
        raise MetricsError(f"unknown normalization {normalization!r}")
    return min(1.0, max(0.0, mutual_info / denom))


def ari(table: np.ndarray) -> float:
    """Adjusted Rand index via pair counting; 1.0 when index equals its maximum
    in the degenerate identical-partition case."""
    table = np.asarray(table, dtype=np.float64)
    n = int(table.sum())
    if n < 2:
        raise MetricsError(f"ARI needs at least 2 points, got {n}")

    def choose2(x):
        return (x * (x - 1)) / 2.0

    index = float(choose2(table).sum())
    sum_rows = float(choose2(table.sum(axis=1)).sum())
    sum_cols = float(choose2(table.sum(axis=0)).sum())
    expected = sum_rows * sum_cols / choose2(n)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def purity(table: np.ndarray) -> float:
    """Fraction of points in their cluster's majority class."""
    table = np.asarray(table, dtype=np.float64)
    n = int(table.sum())
    if n < 1:
        raise MetricsError("table must contain at least one point")
    return float(table.max(axis=0).sum() / n)


def evaluate(true_labels, pred_labels) -> dict[str, float]:
    """Convenience bundle: {'nmi', 'ari', 'acc'} for two label vectors."""
    table = contingency(true_labels, pred_labels)
    return {"nmi": nmi(table), "ari": ari(table), "acc": purity(table)}
