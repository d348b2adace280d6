"""FIFO ring replay buffer that grows its storage lazily up to capacity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    timescale: str = "S"
    done: bool = False
    critic_s: Optional[np.ndarray] = None
    critic_s_next: Optional[np.ndarray] = None


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    critic_s: np.ndarray
    critic_s_next: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    FIELDS = ("s", "a", "r", "s_next", "done", "critic_s", "critic_s_next")

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, critic_dim: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None, initial: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.critic_dim = obs_dim if critic_dim is None else critic_dim
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._alloc = min(capacity, initial)
        self._data = self._empty(self._alloc)
        self.size = 0
        self.head = 0      # next write position
        self.added = 0     # total transitions ever stored

    def _empty(self, n):
        return {
            "s": np.zeros((n, self.obs_dim)),
            "a": np.zeros((n, self.act_dim)),
            "r": np.zeros(n),
            "s_next": np.zeros((n, self.obs_dim)),
            "done": np.zeros(n),
            "critic_s": np.zeros((n, self.critic_dim)),
            "critic_s_next": np.zeros((n, self.critic_dim)),
        }

    def _grow(self):
        new = min(self.capacity, 2 * self._alloc)
        data = self._empty(new)
        for k in self.FIELDS:
            data[k][: self._alloc] = self._data[k]
        self._data, self._alloc = data, new

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        if self.head >= self._alloc and self._alloc < self.capacity:
            self._grow()
        i = self.head
        d = self._data
        d["s"][i] = t.s
        d["a"][i] = t.a
        d["r"][i] = t.r
        d["s_next"][i] = t.s_next
        d["done"][i] = float(t.done)
        d["critic_s"][i] = t.s if t.critic_s is None else t.critic_s
        d["critic_s_next"][i] = t.s_next if t.critic_s_next is None else t.critic_s_next
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1

    def sample(self, n: int) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, size=n)
        return Batch(**{k: self._data[k][idx] for k in self.FIELDS})

    def rewards(self) -> np.ndarray:
        """Stored rewards, oldest first."""
        if self.size < self.capacity:
            return self._data["r"][: self.size].copy()
        return np.roll(self._data["r"], -self.head)
