"""Uniform experience replay over a fixed-capacity FIFO ring buffer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import Action
from ..errors import ContractError
from ..numerics.rng import Xoshiro256pp


@dataclass
class Transition:
    s: np.ndarray
    a: Action
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass
class TransitionBatch:
    s: np.ndarray  # (N, H)
    a: np.ndarray  # (N, 2), physical units
    r: np.ndarray  # (N,)
    s_next: np.ndarray  # (N, H)
    terminal: np.ndarray  # (N,) bool

    @classmethod
    def from_transitions(cls, items: list[Transition]) -> TransitionBatch:
        return cls(
            np.array([t.s for t in items]),
            np.array([tuple(t.a) for t in items], dtype=np.float64),
            np.array([t.r for t in items], dtype=np.float64),
            np.array([t.s_next for t in items]),
            np.array([t.terminal for t in items], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.s[i], Action(*map(float, self.a[i])), float(self.r[i]), self.s_next[i], bool(self.terminal[i]))


class ReplayMemory:
    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, 2))
        self._r = np.zeros(capacity)
        self._s_next = np.zeros((capacity, state_dim))
        self._terminal = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        k = self.cursor
        self._s[k] = t.s
        self._a[k] = t.a
        self._r[k] = t.r
        self._s_next[k] = t.s_next
        self._terminal[k] = t.terminal
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _slot(self, i: int) -> int:
        # logical index 0 is the oldest stored transition
        if not 0 <= i < self.size:
            raise IndexError(i)
        start = self.cursor - self.size
        return (start + i) % self.capacity

    def __getitem__(self, i: int) -> Transition:
        k = self._slot(i)
        return Transition(self._s[k].copy(), Action(*map(float, self._a[k])), float(self._r[k]), self._s_next[k].copy(), bool(self._terminal[k]))

    def sample_indices(self, n: int, rng: Xoshiro256pp) -> list[int]:
        if self.size < n:
            raise ContractError(f"cannot sample {n} transitions from a buffer holding {self.size}")
        return [rng.integers(self.size) for _ in range(n)]

    def sample(self, n: int, rng: Xoshiro256pp) -> TransitionBatch:
        """Draw ``n`` transitions uniformly with replacement."""
        idx = np.array([self._slot(i) for i in self.sample_indices(n, rng)], dtype=np.int64)
        return TransitionBatch(self._s[idx], self._a[idx], self._r[idx], self._s_next[idx], self._terminal[idx])


def replay_push(mem: ReplayMemory, t: Transition) -> None:
    mem.push(t)


def replay_sample(mem: ReplayMemory, n: int, rng: Xoshiro256pp) -> TransitionBatch:
    return mem.sample(n, rng)
