"""Small fully connected Q-network with hand-written backpropagation.

Parameters are a list of ``(W, b)`` pairs with ``W`` of shape ``(fan_in,
fan_out)``. Hidden layers use ReLU, the output layer is linear.
"""
from __future__ import annotations

import numpy as np


def init_mlp(sizes, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-uniform weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return params


def copy_params(params):
    return [(W.copy(), b.copy()) for W, b in params]


def mlp_forward(params, X, return_cache: bool = False):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != params[0][0].shape[0]:
        raise ValueError(f"input width {X.shape[1]} does not match network input {params[0][0].shape[0]}")
    activations = [X]
    h = X
    last = len(params) - 1
    for i, (W, b) in enumerate(params):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        activations.append(h)
    out = h[0] if single else h
    return (out, activations) if return_cache else out


def backprop(params, activations, grad_out):
    """Gradients of a scalar loss given ``d loss / d output`` for the batch."""
    grads = [None] * len(params)
    delta = grad_out
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        h_in = activations[i]
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ W.T) * (activations[i] > 0)
    return grads


def td_loss(params, states, actions, targets) -> float:
    q = mlp_forward(params, states)
    err = q[np.arange(len(actions)), actions] - targets
    return float(np.mean(err**2))


def mlp_backward(params, states, actions, targets):
    """Mean squared TD error over the batch and its gradient for every weight."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    q, activations = mlp_forward(params, states, return_cache=True)
    n = len(actions)
    rows = np.arange(n)
    err = q[rows, actions] - targets
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / n
    return float(np.mean(err**2)), backprop(params, activations, grad_out)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(np.sum(gW**2) + np.sum(gb**2) for gW, gb in grads)))


def clip_by_global_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0:
        return grads
    scale = max_norm / norm
    return [(gW * scale, gb * scale) for gW, gb in grads]


def sgd_update(params, grads, lr: float):
    for (W, b), (gW, gb) in zip(params, grads):
        W -= lr * gW
        b -= lr * gb


def flatten(params) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])
