"""Relaxed categorical cluster assignment: RBF probabilities, Gumbel noise,
temperature-controlled sampling, hard rounding, and the straight-through
gradient path that lets the hard assignment train by backprop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, _record

_UNIFORM_EPS = 1e-12  # uniform draws clamped away from {0,1} so Gumbel stays finite


class ConfigError(ValueError):
    """Raised for invalid hyperparameter values (sigma, tau, schedule)."""


@dataclass(frozen=True)
class TemperatureSchedule:
    """Exponential annealing tau(t) = max(tau_min, tau0 * exp(-decay_rate * t))."""

    tau0: float = 1.0
    tau_min: float = 0.1
    decay_rate: float = 0.05

    def __post_init__(self):
        if self.tau0 <= 0 or self.tau_min <= 0 or self.decay_rate <= 0:
            raise ConfigError(
                f"schedule values must be positive, got tau0={self.tau0}, "
                f"tau_min={self.tau_min}, decay_rate={self.decay_rate}"
            )

    def tau_at(self, step: int) -> float:
        if step < 0:
            raise ConfigError(f"step must be >= 0, got {step}")
        return max(self.tau_min, self.tau0 * math.exp(-self.decay_rate * step))

    @classmethod
    def reach_floor_at(cls, total_steps: int, fraction: float = 0.5,
                       tau0: float = 1.0, tau_min: float = 0.1) -> "TemperatureSchedule":
        """Decay sized so tau hits tau_min after ``fraction`` of ``total_steps``."""
        anneal_steps = max(1.0, fraction * total_steps)
        rate = math.log(tau0 / tau_min) / anneal_steps
        return cls(tau0=tau0, tau_min=tau_min, decay_rate=rate)


def gumbel_sample(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel(0,1) noise matrix, finite by construction."""
    u = np.clip(rng.random((n, k)), _UNIFORM_EPS, 1.0 - _UNIFORM_EPS)
    return -np.log(-np.log(u))


def rbf_log_probs(z: Node, m: Node, sigma: float) -> Node:
    """Log assignment probabilities: row-wise log-softmax of -||z_i - mu_j||^2 / sigma^2.

    Differentiable with respect to both the embeddings and the centroids.
    """
    if sigma <= 0 or not math.isfinite(sigma):
        raise ConfigError(f"sigma must be a positive finite real, got {sigma}")
    z2 = z.square().row_sum()            # N x 1
    m2 = m.square().row_sum()            # k x 1
    cross = z @ m.T                      # N x k
    sq_dists = z2 - cross.scale(2.0) + m2.T
    return sq_dists.scale(-1.0 / (sigma * sigma)).log_softmax_rows()


def concrete_sample(log_probs: Node, gumbel: np.ndarray, tau: float) -> Node:
    """Relaxed one-hot sample: softmax((log p + G) / tau), rows summing to 1."""
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if log_probs.value.shape != gumbel.shape:
        raise ConfigError(
            f"gumbel shape {gumbel.shape} != log-probs shape {log_probs.value.shape}"
        )
    from .autodiff import constant

    logits = (log_probs + constant(gumbel)).scale(1.0 / tau)
    return logits.log_softmax_rows().exp()


def discretize(relaxed: np.ndarray) -> np.ndarray:
    """Round each row to one-hot at its argmax (ties to the lowest index)."""
    relaxed = np.asarray(relaxed, dtype=np.float64)
    out = np.zeros_like(relaxed)
    out[np.arange(relaxed.shape[0]), np.argmax(relaxed, axis=1)] = 1.0
    return out


def straight_through(relaxed: Node) -> Node:
    """Forward the hard rounding, backprop the identity to the relaxed sample."""
    hard = discretize(relaxed.value)

    def bwd(g):
        return (g,)

    return _record(hard, (relaxed,), bwd)


def hard_assign(Z: np.ndarray, M: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Deterministic labels: argmax of the RBF assignment probabilities.

    The softmax is monotone in -distance, so this is sigma-invariant and equal
    to nearest-centroid assignment.
    """
    if sigma <= 0 or not math.isfinite(sigma):
        raise ConfigError(f"sigma must be a positive finite real, got {sigma}")
    Z = np.asarray(Z, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if Z.shape[1] != M.shape[1]:
        raise ConfigError(f"dim mismatch: data {Z.shape} vs centroids {M.shape}")
    sq_dists = (
        (Z * Z).sum(axis=1, keepdims=True)
        - 2.0 * (Z @ M.T)
        + (M * M).sum(axis=1, keepdims=True).T
    )
    return np.argmax(-sq_dists / (sigma * sigma), axis=1)
