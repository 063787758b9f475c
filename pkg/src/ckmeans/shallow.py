"""Shallow concrete k-means: solve the classic fixed-feature k-means objective
by stochastic gradient descent through the straight-through estimator, with
identity encoder/decoder.  Centroids are the only trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, Tape, constant, parameter, zero_grad
from .concrete import (
    ConfigError,
    TemperatureSchedule,
    concrete_sample,
    gumbel_sample,
    hard_assign,
    rbf_log_probs,
    straight_through,
)
from .kmeans import InputError, LloydResult, kmeans_objective, kmeanspp_init, one_hot


@dataclass
class ShallowConfig:
    k: int
    sigma: float = 1.0
    schedule: TemperatureSchedule | None = None   # None: floor at 50% of training
    lr: float = 1e-2
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    restarts: int = 1
    anneal_per: str = "epoch"                     # "epoch" or "step"
    lr_decay: str = "linear"                      # decay to 0 at the last step

    def __post_init__(self):
        if self.k < 1 or self.sigma <= 0 or self.lr <= 0 or self.batch_size < 1 \
                or self.epochs < 0 or self.restarts < 1:
            raise ConfigError(f"invalid shallow config: {self}")
        if self.anneal_per not in ("epoch", "step"):
            raise ConfigError(f"anneal_per must be 'epoch' or 'step', "
                              f"got {self.anneal_per!r}")
        if self.lr_decay not in ("linear", "none"):
            raise ConfigError(f"lr_decay must be 'linear' or 'none', "
                              f"got {self.lr_decay!r}")


def shallow_ckm_fit(X: np.ndarray, cfg: ShallowConfig) -> LloydResult:
    """Fit centroids by Adam on the straight-through relaxed assignment loss.

    Restart ``r`` draws all randomness from ``default_rng([seed, r])`` (the
    same stream layout as ``kmeans_fit``, so both solvers see identical
    k-means++ seeds); the best restart by final exact objective wins.
    Evaluation labels always come from the deterministic hard assignment.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < cfg.k:
        raise InputError(f"need at least k={cfg.k} points, got {n}")
    batch_size = min(cfg.batch_size, n)
    steps_per_epoch = (n + batch_size - 1) // batch_size
    if cfg.anneal_per == "epoch":
        total = max(1, cfg.epochs)
    else:
        total = max(1, cfg.epochs * steps_per_epoch)
    schedule = cfg.schedule or TemperatureSchedule.reach_floor_at(total)

    total_steps = max(1, cfg.epochs * steps_per_epoch)
    best: LloydResult | None = None
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        m = parameter(kmeanspp_init(X, cfg.k, rng))
        opt = Adam(lr=cfg.lr)
        step = 0
        for epoch in range(cfg.epochs):
            tau = schedule.tau_at(epoch if cfg.anneal_per == "epoch" else step)
            perm = rng.permutation(n)
            for start in range(0, n, batch_size):
                if cfg.anneal_per == "step":
                    tau = schedule.tau_at(step)
                if cfg.lr_decay == "linear":
                    opt.lr = cfg.lr * (1.0 - step / total_steps)
                batch = X[perm[start:start + batch_size]]
                zero_grad([m])
                with Tape() as tape:
                    xb = constant(batch)
                    log_probs = rbf_log_probs(xb, m, cfg.sigma)
                    gumbel = gumbel_sample(batch.shape[0], cfg.k, rng)
                    relaxed = concrete_sample(log_probs, gumbel, tau)
                    hard = straight_through(relaxed)
                    loss = (xb - hard @ m).sq_frobenius()
                    tape.backward(loss)
                opt.step([m])
                step += 1
        labels = hard_assign(X, m.value, cfg.sigma)
        objective = kmeans_objective(X, one_hot(labels, cfg.k), m.value)
        if best is None or objective < best.objective:
            best = LloydResult(
                centroids=m.value.copy(),
                labels=labels,
                objective=objective,
                iterations=step,
                converged=True,
            )
    return best
