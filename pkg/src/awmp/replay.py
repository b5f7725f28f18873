"""Ring-buffer replay with uniform and recent-window sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    behavior_logprob: float


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    behavior_logprobs: np.ndarray
    ids: np.ndarray  # write-counter ids of the sampled transitions

    def __len__(self):
        return len(self.rewards)

    def head(self, n):
        return Batch(*(getattr(self, f)[:n] for f in self.__dataclass_fields__))


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions in preallocated arrays.

    ``writes`` counts every push ever made; a transition's id is the value of
    the counter when it was written, so evicted ids are simply those below
    ``writes - size``.
    """

    def __init__(self, state_dim, action_dim, capacity=1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.behavior_logprobs = np.zeros(capacity)
        self.ids = np.zeros(capacity, dtype=np.int64)
        self.writes = 0

    def __len__(self):
        return min(self.writes, self.capacity)

    def push(self, tr):
        i = self.writes % self.capacity
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.terminals[i] = tr.terminal
        self.behavior_logprobs[i] = tr.behavior_logprob
        self.ids[i] = self.writes
        self.writes += 1

    def _gather(self, slots):
        return Batch(self.states[slots], self.actions[slots], self.rewards[slots],
                     self.next_states[slots], self.terminals[slots],
                     self.behavior_logprobs[slots], self.ids[slots])

    def sample_uniform(self, n, rng):
        """``n`` independent uniform draws with replacement (``n`` may exceed the size)."""
        size = len(self)
        if size < 1:
            raise ValueError(f"cannot sample {n} transitions from an empty buffer")
        return self._gather(rng.integers(0, size, size=n))

    def sample_recent(self, window, n, rng):
        """Uniform draws (with replacement) from the last ``min(window, size)`` writes."""
        size = len(self)
        if size < 1:
            raise ValueError("cannot sample from an empty buffer")
        w = min(int(window), size)
        back = rng.integers(0, w, size=n)  # 0 = newest
        slots = (self.writes - 1 - back) % self.capacity
        return self._gather(slots)
