"""Non-learning baselines: uniform random and fixed-order first fit."""
from __future__ import annotations

import numpy as np

from .base import Scheduler


class RandomScheduler(Scheduler):
    def __init__(self, n_servers: int = 4, random_state: int | None = None):
        self.n_servers = n_servers
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def begin_episode(self, seed: int):
        # per-episode stream so paired evaluations do not depend on episode order
        self.rng_ = np.random.default_rng(np.random.SeedSequence(self.random_state, spawn_key=(int(seed),)))

    def predict(self, X) -> np.ndarray:
        X = self._validate_X(X)
        if not hasattr(self, "rng_"):
            self.fit()
        return self.rng_.integers(self.n_servers, size=len(X))


class GreedyScheduler(Scheduler):
    """First server, in index order, whose residual capacity fits the task.

    Falls back to the last server when nothing fits, which the environment
    records as a drop. ``service_time`` must match the environment's so the
    held demand is computed the same way.
    """

    def __init__(self, n_servers: int = 4, service_time: float = 0.05):
        self.n_servers = n_servers
        self.service_time = service_time

    def fit(self, X=None, y=None):
        return self

    def predict(self, X) -> np.ndarray:
        X = self._validate_X(X)
        e = self.n_servers
        caps = X[:, e : 4 * e].reshape(-1, e, 3)
        used = X[:, 4 * e : 7 * e].reshape(-1, e, 3)
        demand = X[:, 7 * e :] / self.service_time
        fits = np.all(used + demand[:, None, :] <= caps, axis=2)
        return np.where(fits.any(axis=1), fits.argmax(axis=1), e - 1)
