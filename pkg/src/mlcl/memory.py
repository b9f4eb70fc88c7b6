"""Momentum encoder, FIFO key queue and trainable label prototypes."""

from __future__ import annotations

import numpy as np

from .encoder import EncoderParams
from .numerics import l2_normalize


class KeyQueue:
    """Ring buffer of detached keys, each stored with its label vector.

    ``keys()`` / ``labels()`` return copies ordered oldest to newest.
    """

    def __init__(self, capacity: int, dim: int, num_labels: int):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self._keys = np.zeros((capacity, dim))
        self._labels = np.zeros((capacity, num_labels))
        self.head = 0  # next write slot
        self.size = 0

    def __len__(self):
        return self.size

    def _order(self) -> np.ndarray:
        start = (self.head - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def keys(self) -> np.ndarray:
        out = self._keys[self._order()].copy()
        out.flags.writeable = False
        return out

    def labels(self) -> np.ndarray:
        out = self._labels[self._order()].copy()
        out.flags.writeable = False
        return out

    def enqueue_dequeue(self, keys, labels) -> "KeyQueue":
        """Push a batch; the oldest entries fall out once capacity is reached."""
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        n = keys.shape[0]
        if n > self.capacity:
            raise ValueError(f"batch of {n} exceeds queue capacity {self.capacity}")
        if labels.shape[0] != n:
            raise ValueError("keys and labels must pair one-to-one")
        slots = (self.head + np.arange(n)) % self.capacity
        self._keys[slots] = keys
        self._labels[slots] = labels
        self.head = int((self.head + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)
        return self

    def state(self) -> dict[str, np.ndarray]:
        return {
            "queue.keys": self.keys(),
            "queue.labels": self.labels(),
            "queue.capacity": np.array([float(self.capacity)]),
        }

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "KeyQueue":
        keys = np.asarray(state["queue.keys"], dtype=np.float64)
        labels = np.asarray(state["queue.labels"], dtype=np.float64)
        q = cls(int(state["queue.capacity"][0]), keys.shape[1], labels.shape[1])
        if len(keys):
            q.enqueue_dequeue(keys, labels)
        return q


def momentum_update(target: EncoderParams, online: EncoderParams, m: float) -> EncoderParams:
    """Return ``m * target + (1 - m) * online`` tensor by tensor."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    t, o = target.tensors(), online.tensors()
    if t.keys() != o.keys() or any(t[k].shape != o[k].shape for k in t):
        raise ValueError("momentum encoder and encoder shapes differ")
    return EncoderParams.from_tensors({k: m * t[k] + (1.0 - m) * o[k] for k in t})


def init_prototypes(num_labels: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``num_labels`` random unit rows of length ``dim``."""
    if num_labels < 1 or dim < 2:
        raise ValueError("need at least one label and dimension >= 2")
    return l2_normalize(rng.standard_normal((num_labels, dim)))


def renormalize_prototypes(protos: np.ndarray) -> np.ndarray:
    return l2_normalize(protos)
