from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity ring of (state, action, reward, next_state, done, steps) transitions.

    ``steps`` is the number of environment ticks the transition spans; the
    bootstrap term is discounted by ``discount ** steps``.
    """

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.steps = np.ones(capacity, dtype=int)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def add(self, state, action: int, reward: float, next_state, done: bool, steps: int = 1) -> None:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        i = self.pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self.steps[i] = steps
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size > self.size:
            raise ValueError(f"cannot draw {batch_size} from {self.size} stored transitions")
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
            self.steps[idx],
        )
