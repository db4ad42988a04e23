from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from ..env import MdpState


class Scheduler(BaseEstimator):
    """Common surface of every provisioning policy.

    ``predict`` maps raw observation rows of width ``7 * n_servers + 3`` to
    server indices; ``act`` is the single-state form used inside episodes.
    """

    def _validate_X(self, X) -> np.ndarray:
        X = check_array(X, ensure_2d=False, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        width = 7 * self.n_servers + 3
        if X.shape[1] != width:
            raise ValueError(f"expected observations of width {width}, got {X.shape[1]}")
        return X

    def act(self, state, explore: bool = False) -> int:
        x = state.vector() if isinstance(state, MdpState) else np.asarray(state, dtype=float)
        return int(self.predict(x[None, :])[0])

    def begin_episode(self, seed: int):
        """Hook called before each evaluation episode."""

    def observe(self, transition):
        """Baselines do not learn."""

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"class": type(self).__name__, "params": self.get_params()}, fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            blob = json.load(fh)
        return cls(**blob["params"])
