from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class ObservationScaler(TransformerMixin, BaseEstimator):
    """Maps raw MDP observations onto roughly unit scale.

    Delays are divided by ``delay_cap``, capacities by the per-dimension
    ``capacity_max``, utilized resources by the owning server's capacity, and
    task requirements by ``ops_max``. Bounds left as ``None`` are learned from
    the rows passed to ``fit``.
    """

    def __init__(self, n_servers: int = 4, delay_cap=None, capacity_max=None, ops_max=None):
        self.n_servers = n_servers
        self.delay_cap = delay_cap
        self.capacity_max = capacity_max
        self.ops_max = ops_max

    def _check(self, X):
        X = check_array(X, ensure_2d=False, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != 7 * self.n_servers + 3:
            raise ValueError(f"expected width {7 * self.n_servers + 3}, got {X.shape[1]}")
        return X

    def fit(self, X=None, y=None):
        e = self.n_servers
        needs_data = self.delay_cap is None or self.capacity_max is None or self.ops_max is None
        if needs_data:
            if X is None:
                raise ValueError("bounds missing and no observations to learn them from")
            X = self._check(X)
        self.delay_cap_ = float(self.delay_cap) if self.delay_cap is not None else float(X[:, :e].max())
        if self.capacity_max is not None:
            self.capacity_max_ = np.asarray(self.capacity_max, dtype=float)
        else:
            self.capacity_max_ = X[:, e : 4 * e].reshape(-1, 3).max(axis=0)
        if self.ops_max is not None:
            self.ops_max_ = np.asarray(self.ops_max, dtype=float)
        else:
            self.ops_max_ = X[:, 7 * e :].max(axis=0)
        self.ops_max_ = np.where(self.ops_max_ > 0, self.ops_max_, 1.0)
        return self

    def transform(self, X):
        check_is_fitted(self, "capacity_max_")
        single = np.ndim(X) == 1
        X = self._check(X)
        e = self.n_servers
        caps = X[:, e : 4 * e].reshape(-1, e, 3)
        used = X[:, 4 * e : 7 * e].reshape(-1, e, 3)
        out = np.concatenate(
            [
                X[:, :e] / self.delay_cap_,
                (caps / self.capacity_max_).reshape(len(X), -1),
                (used / caps).reshape(len(X), -1),
                X[:, 7 * e :] / self.ops_max_,
            ],
            axis=1,
        )
        return out[0] if single else out
