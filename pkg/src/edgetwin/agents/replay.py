from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity ring buffer of (state, action, reward, next_state, terminal)."""

    def __init__(self, capacity: int, state_size: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_size))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_size))
        self.terminals = np.zeros(capacity, dtype=bool)
        self._pos = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, state, action, reward, next_state, terminal):
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminals[idx]
