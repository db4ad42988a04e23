"""Deep Q-network scheduler: replay buffer, target network, epsilon-greedy."""
from __future__ import annotations

import json
import math
import struct

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .base import Scheduler
from .mlp import clip_by_global_norm, copy_params, init_mlp, mlp_backward, mlp_forward, sgd_update
from .preprocessing import ObservationScaler
from .replay import ReplayBuffer

CHECKPOINT_MAGIC = b"EDTQ"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


def dqn_train_step(buffer: ReplayBuffer, online, target, config, rng: np.random.Generator, step_index: int = 0):
    """One SGD update on a replay minibatch.

    Returns the batch loss, or ``None`` when the buffer holds fewer than
    ``config.batch_size`` transitions. Copies ``online`` into ``target`` in
    place after every ``config.target_sync_interval``-th update.
    """
    if len(buffer) < config.batch_size:
        return None
    s, a, r, s2, term = buffer.sample(config.batch_size, rng)
    q_next = mlp_forward(target, s2)
    if config.double_dqn:
        best = mlp_forward(online, s2).argmax(axis=1)
        bootstrap = q_next[np.arange(len(best)), best]
    else:
        bootstrap = q_next.max(axis=1)
    y = r + config.gamma * np.where(term, 0.0, bootstrap)
    loss, grads = mlp_backward(online, s, a, y)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite TD loss at update {step_index}: {loss}")
    sgd_update(online, clip_by_global_norm(grads, config.grad_clip), config.learning_rate)
    if (step_index + 1) % config.target_sync_interval == 0:
        for (tW, tb), (W, b) in zip(target, online):
            np.copyto(tW, W)
            np.copyto(tb, b)
    return loss


class DQNScheduler(Scheduler):
    """Epsilon-greedy DQN over normalized observations.

    ``fit`` takes one environment or a sequence of them instead of ``X``;
    episode ``i`` runs on ``envs[i % len(envs)]`` reset with ``seeds[i]``.
    """

    def __init__(
        self,
        n_servers: int = 4,
        hidden_sizes=(64, 64),
        learning_rate: float = 1e-3,
        gamma: float = 0.99,
        replay_capacity: int = 50_000,
        batch_size: int = 64,
        target_sync_interval: int = 500,
        epsilon_start: float = 1.0,
        epsilon_end: float = 0.05,
        epsilon_decay_steps: int = 20_000,
        n_episodes: int = 200,
        train_every: int = 1,
        double_dqn: bool = False,
        grad_clip: float = 10.0,
        delay_cap=None,
        capacity_max=None,
        ops_max=None,
        warm_start: bool = False,
        random_state: int | None = None,
    ):
        self.n_servers = n_servers
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.target_sync_interval = target_sync_interval
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_steps = epsilon_decay_steps
        self.n_episodes = n_episodes
        self.train_every = train_every
        self.double_dqn = double_dqn
        self.grad_clip = grad_clip
        self.delay_cap = delay_cap
        self.capacity_max = capacity_max
        self.ops_max = ops_max
        self.warm_start = warm_start
        self.random_state = random_state

    def _validate_params(self):
        bad = []
        if not 0 <= self.gamma < 1:
            bad.append("gamma must lie in [0, 1)")
        for name in ("replay_capacity", "batch_size", "target_sync_interval", "epsilon_decay_steps", "train_every"):
            if not getattr(self, name) > 0:
                bad.append(f"{name} must be > 0")
        if self.n_episodes < 0:
            bad.append("n_episodes must be >= 0")
        if not all(h > 0 for h in self.hidden_sizes):
            bad.append("hidden_sizes must be positive")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                bad.append(f"{name} must lie in [0, 1]")
        if not self.learning_rate > 0:
            bad.append("learning_rate must be > 0")
        if self.batch_size > self.replay_capacity:
            bad.append("batch_size must not exceed replay_capacity")
        if bad:
            raise ValueError("invalid DQN configuration: " + "; ".join(bad))

    @property
    def layer_sizes(self):
        return [7 * self.n_servers + 3, *self.hidden_sizes, self.n_servers]

    def epsilon(self, step: int) -> float:
        frac = max(0.0, 1.0 - step / self.epsilon_decay_steps)
        return self.epsilon_end + (self.epsilon_start - self.epsilon_end) * frac

    def _init_state(self, env):
        self._validate_params()
        self.rng_ = np.random.default_rng(self.random_state)
        bounds = env.bounds()
        self.scaler_ = ObservationScaler(
            self.n_servers,
            self.delay_cap if self.delay_cap is not None else env.delay_cap,
            self.capacity_max if self.capacity_max is not None else bounds["capacity_max"],
            self.ops_max if self.ops_max is not None else bounds["ops_max"],
        ).fit()
        self.params_ = init_mlp(self.layer_sizes, self.rng_)
        self.target_params_ = copy_params(self.params_)
        self.buffer_ = ReplayBuffer(self.replay_capacity, self.layer_sizes[0])
        self.total_steps_ = 0
        self.train_steps_ = 0
        self.curve_ = []
        self.best_reward_ = -math.inf
        self.best_params_ = copy_params(self.params_)

    def fit(self, envs, seeds=None, callback=None):
        envs = list(envs) if isinstance(envs, (list, tuple)) else [envs]
        if any(env.n_servers != self.n_servers for env in envs):
            raise ValueError("environment server count does not match n_servers")
        if not (self.warm_start and hasattr(self, "params_")):
            self._init_state(envs[0])
        if not hasattr(self, "buffer_"):
            self.buffer_ = ReplayBuffer(self.replay_capacity, self.layer_sizes[0])
        start = len(self.curve_)
        zero = np.zeros(self.layer_sizes[0])
        for i in range(self.n_episodes):
            episode = start + i
            env = envs[episode % len(envs)]
            seed = None if seeds is None else seeds[episode % len(seeds)]
            self.last_good_params_ = copy_params(self.params_)
            x = self._scale(env.reset(seed).vector())
            rewards, losses = [], []
            while True:
                eps = self.epsilon(self.total_steps_)
                if self.rng_.random() < eps:
                    action = int(self.rng_.integers(self.n_servers))
                else:
                    action = int(np.argmax(mlp_forward(self.params_, x)))
                out = env.step(action)
                x2 = zero if out.done else self._scale(out.next_state.vector())
                self.buffer_.add(x, action, out.reward, x2, out.done)
                rewards.append(out.reward)
                self.total_steps_ += 1
                if self.total_steps_ % self.train_every == 0:
                    loss = dqn_train_step(self.buffer_, self.params_, self.target_params_, self, self.rng_, self.train_steps_)
                    if loss is not None:
                        self.train_steps_ += 1
                        losses.append(loss)
                if out.done:
                    break
                x = x2
            record = {
                "episode": episode,
                "mean_reward": math.fsum(rewards) / len(rewards),
                "loss": float(np.mean(losses)) if losses else math.nan,
                "epsilon": self.epsilon(self.total_steps_),
            }
            self.curve_.append(record)
            if record["mean_reward"] > self.best_reward_:
                self.best_reward_ = record["mean_reward"]
                self.best_params_ = copy_params(self.params_)
            if callback is not None:
                callback(self, record)
        return self

    def _scale(self, x):
        s = self.scaler_
        e = self.n_servers
        caps = x[e : 4 * e].reshape(e, 3)
        return np.concatenate(
            [
                x[:e] / s.delay_cap_,
                (caps / s.capacity_max_).ravel(),
                (x[4 * e : 7 * e].reshape(e, 3) / caps).ravel(),
                x[7 * e :] / s.ops_max_,
            ]
        )

    def q_values(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = self._validate_X(X)
        return mlp_forward(self.params_, self.scaler_.transform(X))

    def predict(self, X) -> np.ndarray:
        return self.q_values(X).argmax(axis=1)

    def act(self, state, explore: bool = False) -> int:
        check_is_fitted(self, "params_")
        x = state.vector() if hasattr(state, "vector") else np.asarray(state, dtype=float)
        if explore and self.rng_.random() < self.epsilon(self.total_steps_):
            return int(self.rng_.integers(self.n_servers))
        return int(np.argmax(mlp_forward(self.params_, self._scale(x))))

    def observe(self, transition):
        state, action, reward, next_state, terminal = transition
        nxt = np.zeros(self.layer_sizes[0]) if terminal else self._scale(np.asarray(next_state, dtype=float))
        self.buffer_.add(self._scale(np.asarray(state, dtype=float)), action, reward, nxt, terminal)

    # -- persistence --------------------------------------------------------
    def save(self, path, params=None):
        check_is_fitted(self, "params_")
        params = self.params_ if params is None else params
        meta = {
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "scaler": {
                "delay_cap": self.scaler_.delay_cap_,
                "capacity_max": self.scaler_.capacity_max_.tolist(),
                "ops_max": self.scaler_.ops_max_.tolist(),
            },
            "episodes_trained": len(getattr(self, "curve_", [])),
            "total_steps": int(getattr(self, "total_steps_", 0)),
            "train_steps": int(getattr(self, "train_steps_", 0)),
        }
        write_checkpoint(path, params, meta)

    @classmethod
    def load(cls, path) -> "DQNScheduler":
        params, meta = read_checkpoint(path)
        kwargs = dict(meta["params"])
        kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        model = cls(**kwargs)
        model.params_ = params
        model.target_params_ = copy_params(params)
        model.scaler_ = ObservationScaler(model.n_servers, **meta["scaler"]).fit()
        model.rng_ = np.random.default_rng(model.random_state)
        model.total_steps_ = meta.get("total_steps", 0)
        model.train_steps_ = meta.get("train_steps", 0)
        model.curve_ = [None] * meta.get("episodes_trained", 0)
        model.best_reward_ = -math.inf
        model.best_params_ = copy_params(params)
        return model


def write_checkpoint(path, params, meta: dict):
    """Little-endian layout: magic, version, JSON metadata, layer shapes, then
    each layer's row-major weights followed by its biases as float64."""
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for W, _ in params:
            fh.write(struct.pack("<II", *W.shape))
        for W, b in params:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a DQN checkpoint")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(data[off : off + meta_len])
    off += meta_len
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", data, off))
        off += 8
    params = []
    for rows, cols in shapes:
        W = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(float)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=off).astype(float)
        off += 8 * cols
        params.append((W, b))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return params, meta


def train(envs, config: dict | None = None, episodes: int | None = None, seeds=None, checkpoint=None):
    """Train a fresh scheduler; returns ``(model, curve)``.

    When ``checkpoint`` is given, the weights with the best episodic reward
    are written there. No episodes means no checkpoint.
    """
    config = dict(config or {})
    if episodes is not None:
        config["n_episodes"] = episodes
    model = DQNScheduler(**config)
    model.fit(envs, seeds=seeds)
    if checkpoint is not None and model.curve_:
        model.save(checkpoint, params=model.best_params_)
    return model, list(model.curve_)
