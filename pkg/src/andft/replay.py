"""Bounded FIFO of backbone features paired with their nuisance labels."""

from __future__ import annotations

from collections import deque
from typing import Iterator

import numpy as np


class ReplayQueue:
    """Fixed-capacity feature queue; the oldest items are evicted first.

    Capacity is counted in items (feature rows), not batches. Features are
    stored as copies and never recomputed, so what comes out is exactly what
    went in, however stale.
    """

    def __init__(self, capacity: int, feature_dim: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if feature_dim <= 0:
            raise ValueError(f"feature_dim must be positive, got {feature_dim}")
        self.capacity = capacity
        self.feature_dim = feature_dim
        self._items: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return iter(self._items)

    def enqueue_batch(self, features, labels) -> None:
        F = np.asarray(features, dtype=np.float64)
        Y = np.asarray(labels)
        if F.ndim != 2 or F.shape[1] != self.feature_dim:
            raise ValueError(f"features must be (n, {self.feature_dim}), got {F.shape}")
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[0] != F.shape[0]:
            raise ValueError(f"{F.shape[0]} features but {Y.shape[0]} labels")
        if F.shape[0] > self.capacity:
            raise ValueError(f"batch of {F.shape[0]} exceeds queue capacity {self.capacity}")
        for f, y in zip(F, Y):
            self._items.append((f.copy(), y.copy()))

    def _stack(self, items) -> tuple[np.ndarray, np.ndarray]:
        return np.stack([f for f, _ in items]), np.stack([y for _, y in items])

    def latest_batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """The ``n`` most recently enqueued items, oldest first."""
        if n <= 0 or n > len(self._items):
            raise ValueError(f"cannot take {n} items from a queue holding {len(self._items)}")
        start = len(self._items) - n
        return self._stack([self._items[i] for i in range(start, len(self._items))])

    def full_pass_minibatches(self, n: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
        """Shuffle the queue and cut it into ``len // n`` disjoint minibatches of size ``n``.

        Leftover items (``len % n``) are skipped for this pass.
        """
        if n <= 0 or n > len(self._items):
            raise ValueError(f"cannot take minibatches of {n} from a queue holding {len(self._items)}")
        F, Y = self._stack(self._items)
        perm = rng.permutation(len(F))
        nb = len(F) // n
        return [(F[idx], Y[idx]) for idx in perm[: nb * n].reshape(nb, n)]
