"""Experience replay: a uniform ring buffer and a sum-tree prioritized store."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import StateWindow, build_state_vector
from .errors import DomainError, UsageError

PER_EPS = 0.01
PER_ALPHA = 0.6
BETA_START = 0.4
BETA_INCREMENT = 0.001
BETA_EVERY = 1000


@dataclass(frozen=True)
class Transition:
    state: StateWindow
    action: int
    reward: float
    dt: float
    next_state: StateWindow
    terminal: bool
    truncated: bool = False


def anneal_beta(step: int) -> float:
    """Importance-sampling exponent: 0.4, +0.001 every 1000 iterations, capped at 1."""
    if step < 0:
        raise DomainError(f"iteration must be >= 0, got {step}")
    return min(1.0, BETA_START + BETA_INCREMENT * (step // BETA_EVERY))


def priority_from_error(td_error, eps: float = PER_EPS, alpha: float = PER_ALPHA):
    return (np.abs(td_error) + eps) ** alpha


class SumTree:
    """Binary tree over ``capacity`` leaves where each internal node holds
    the sum of its children.  Heap layout: node 1 is the root, leaves occupy
    ``capacity .. 2 * capacity - 1``."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        cap = 1
        while cap < capacity:
            cap *= 2
        self.capacity = cap
        self.depth = cap.bit_length() - 1
        self.nodes = np.zeros(2 * cap)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity:]

    def __getitem__(self, leaf):
        return self.nodes[self.capacity + np.asarray(leaf)]

    def update(self, leaf, priority) -> None:
        leaf = np.atleast_1d(np.asarray(leaf, dtype=np.intp))
        priority = np.broadcast_to(np.asarray(priority, dtype=float), leaf.shape)
        if np.any(priority < 0) or not np.all(np.isfinite(priority)):
            raise DomainError("priorities must be finite and >= 0")
        idx = leaf + self.capacity
        self.nodes[idx] = priority
        # Recompute parents from their children rather than adding deltas so
        # rounding never accumulates along the path.
        for _ in range(self.depth):
            idx = np.unique(idx >> 1)
            self.nodes[idx] = self.nodes[2 * idx] + self.nodes[2 * idx + 1]

    def find(self, values) -> np.ndarray:
        """Leaf index whose cumulative-priority bucket contains each value."""
        u = np.array(values, dtype=float, ndmin=1)
        idx = np.ones(u.shape, dtype=np.intp)
        for _ in range(self.depth):
            left = 2 * idx
            lsum = self.nodes[left]
            go_right = (u >= lsum) & (self.nodes[left + 1] > 0)
            u = np.where(go_right, u - lsum, u)
            idx = np.where(go_right, left + 1, left)
        return idx - self.capacity

    def check(self, tol: float = 1e-9) -> bool:
        n = self.nodes
        internal = np.arange(1, self.capacity)
        return bool(np.all(np.abs(n[internal] - n[2 * internal] - n[2 * internal + 1]) <= tol))


@dataclass
class Batch:
    indices: np.ndarray
    weights: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dts: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    truncateds: np.ndarray
    transitions: list

    def __len__(self) -> int:
        return len(self.indices)


class ReplayBuffer:
    """Capacity-bounded ring of transitions with uniform sampling.

    ``encode`` turns a state window into the network input; vectors are
    cached on push so sampling never rebuilds them.
    """

    prioritized = False

    def __init__(self, capacity: int = 50_000, encode: Callable[[StateWindow], np.ndarray] | None = None,
                 start_size: int = 0):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.encode = encode or build_state_vector
        self.start_size = int(start_size)
        self.size = 0
        self.cursor = 0
        self.pushes = 0
        self._items: list = [None] * self.capacity
        self._gen = np.zeros(self.capacity, dtype=np.int64)
        self._arrays = None

    def __len__(self) -> int:
        return self.size

    def _alloc(self, dim: int) -> None:
        cap = self.capacity
        self._arrays = {
            "states": np.zeros((cap, dim)),
            "next_states": np.zeros((cap, dim)),
            "actions": np.zeros(cap, dtype=np.intp),
            "rewards": np.zeros(cap),
            "dts": np.zeros(cap),
            "terminals": np.zeros(cap, dtype=bool),
            "truncateds": np.zeros(cap, dtype=bool),
        }

    def push(self, t: Transition) -> int:
        s = self.encode(t.state)
        s2 = self.encode(t.next_state)
        if self._arrays is None:
            self._alloc(s.size)
        slot = self.cursor
        a = self._arrays
        a["states"][slot] = s
        a["next_states"][slot] = s2
        a["actions"][slot] = t.action
        a["rewards"][slot] = t.reward
        a["dts"][slot] = t.dt
        a["terminals"][slot] = t.terminal
        a["truncateds"][slot] = t.truncated
        self._items[slot] = t
        self._gen[slot] += 1
        self.cursor = (slot + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushes += 1
        return slot

    def __getitem__(self, slot: int) -> Transition:
        if not 0 <= slot < self.size:
            raise IndexError(slot)
        return self._items[slot]

    def _check_ready(self, batch_size: int) -> None:
        if batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        need = max(batch_size, self.start_size)
        if self.size < need:
            raise UsageError(f"replay holds {self.size} transitions; sampling needs {need}")

    def _gather(self, idx: np.ndarray, weights: np.ndarray) -> Batch:
        a = self._arrays
        return Batch(
            indices=idx,
            weights=weights,
            states=a["states"][idx],
            actions=a["actions"][idx],
            rewards=a["rewards"][idx],
            dts=a["dts"][idx],
            next_states=a["next_states"][idx],
            terminals=a["terminals"][idx],
            truncateds=a["truncateds"][idx],
            transitions=[self._items[i] for i in idx],
        )

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float = 0.0) -> Batch:
        self._check_ready(batch_size)
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self._gather(np.asarray(idx, dtype=np.intp), np.ones(batch_size))

    def update_priorities(self, indices, td_errors) -> None:
        """No-op for uniform replay."""


class PrioritizedReplay(ReplayBuffer):
    """Proportional prioritized replay backed by a :class:`SumTree`.

    Stored priority is ``(|td| + eps) ** alpha``; fresh transitions get the
    largest priority seen so far so each is replayed at least once.
    """

    prioritized = True

    def __init__(self, capacity: int = 50_000, encode=None, start_size: int = 0,
                 eps: float = PER_EPS, alpha: float = PER_ALPHA, initial_priority: float = 1.0):
        super().__init__(capacity, encode, start_size)
        self.tree = SumTree(self.capacity)
        self.eps = eps
        self.alpha = alpha
        self.max_priority = float(initial_priority)
        self._last = None

    def push(self, t: Transition) -> int:
        slot = super().push(t)
        self.tree.update(slot, self.max_priority)
        return slot

    def probabilities(self) -> np.ndarray:
        p = self.tree.leaves()[: self.size]
        return p / p.sum()

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float = 0.4) -> Batch:
        self._check_ready(batch_size)
        total = self.tree.total
        seg = total / batch_size
        u = (np.arange(batch_size) + rng.random(batch_size)) * seg
        u = np.minimum(u, math.nextafter(total, 0.0))
        idx = self.tree.find(u)
        probs = self.tree[idx] / total
        w = (self.size * probs) ** (-beta)
        w = w / w.max()
        self._last = (idx.copy(), self._gen[idx].copy())
        return self._gather(idx, w)

    def update_priorities(self, indices, td_errors) -> None:
        idx = np.asarray(indices, dtype=np.intp)
        err = np.asarray(td_errors, dtype=float)
        if idx.shape != err.shape:
            raise DomainError("indices and td_errors must have the same shape")
        if np.any((idx < 0) | (idx >= self.size)):
            raise UsageError("priority update for an index outside the stored range")
        if self._last is None:
            raise UsageError("priority update without a preceding sample")
        last_idx, last_gen = self._last
        pos = {int(i): k for k, i in enumerate(last_idx)}
        for i in idx:
            k = pos.get(int(i))
            if k is None or self._gen[i] != last_gen[k]:
                raise UsageError(f"stale priority update for slot {int(i)}")
        p = priority_from_error(err, self.eps, self.alpha)
        self.tree.update(idx, p)
        self.max_priority = max(self.max_priority, float(p.max()))


def make_replay(prioritized: bool, capacity: int, encode=None, start_size: int = 0) -> ReplayBuffer:
    cls = PrioritizedReplay if prioritized else ReplayBuffer
    return cls(capacity=capacity, encode=encode, start_size=start_size)
