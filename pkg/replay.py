"""
Bounded replay memory for continual updates.

Items are preprocessed feature vectors (the pipeline is frozen, so nothing is
lost). Insertion is seeded and optionally class-balanced, eviction removes the
oldest items (of the largest class when balancing), and sampling is uniform
without replacement.
"""
from collections import deque
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from errors import ConfigError

LABEL = "label"
CONCEPT = "concept"


@dataclass(frozen=True, eq=False)
class ReplayItem:
    x: np.ndarray
    y: int
    slice_id: int
    counter: int
    concept: int = -1


class ReplayBuffer:
    """Replay memory M with class-balanced insertion and oldest-first eviction"""

    def __init__(self, capacity, balanced=True, seed=0, balance_key=LABEL):
        if capacity < 0:
            raise ConfigError(f"replay capacity must be >= 0, got {capacity}")
        if balance_key not in (LABEL, CONCEPT):
            raise ConfigError(f"unknown balance key '{balance_key}'")
        self.capacity = int(capacity)
        self.balanced = bool(balanced)
        self.seed = int(seed)
        self.balance_key = balance_key
        self._items: Dict[int, ReplayItem] = {}
        self._counter = 0
        self._arrays = None
        self.trace: List[dict] = []

    def __len__(self):
        return len(self._items)

    @property
    def items(self):
        return list(self._items.values())

    def _key(self, item):
        return item.y if self.balance_key == LABEL else item.concept

    def class_counts(self):
        counts = {}
        for item in self._items.values():
            counts[item.y] = counts.get(item.y, 0) + 1
        return counts

    def key_counts(self):
        counts = {}
        for item in self._items.values():
            k = self._key(item)
            counts[k] = counts.get(k, 0) + 1
        return counts

    # ------------------------------------------------------------------
    # Insertion & eviction
    # ------------------------------------------------------------------

    def _balanced_pick(self, pool, keys, quota, rng):
        groups = {int(k): deque(rng.permutation(pool[keys == k]).tolist()) for k in np.unique(keys)}
        held = self.key_counts()
        picked = []
        while len(picked) < quota:
            available = [k for k, q in groups.items() if q]
            if not available:
                break
            k = min(available, key=lambda c: (held.get(c, 0), c))
            picked.append(groups[k].popleft())
            held[k] = held.get(k, 0) + 1
        return np.asarray(picked, dtype=np.int64)

    def insert_after_slice(self, slice_, quota, concepts=None):
        """Store up to `quota` rows from the slice's training split, then evict overflow."""
        pool = np.asarray(slice_.train_idx, dtype=np.int64)
        if self.capacity == 0 or quota <= 0 or pool.size == 0:
            return self
        if self.balance_key == CONCEPT and concepts is None:
            raise ConfigError("concept-balanced replay needs concept ids for the slice")

        rng = np.random.default_rng([self.seed, slice_.slice_id])
        if self.balanced:
            keys = slice_.y[pool] if self.balance_key == LABEL else np.asarray(concepts)[pool]
            chosen = self._balanced_pick(pool, keys, quota, rng)
        else:
            chosen = rng.permutation(pool)[:quota]

        for i in chosen:
            item = ReplayItem(
                x=np.array(slice_.X[i], dtype=float),
                y=int(slice_.y[i]),
                slice_id=slice_.slice_id,
                counter=self._counter,
                concept=int(concepts[i]) if concepts is not None else -1,
            )
            self._items[item.counter] = item
            self.trace.append({"op": "insert", "counter": item.counter, "slice_id": item.slice_id, "y": item.y})
            self._counter += 1
        self._evict()
        self._arrays = None
        return self

    def _evict(self):
        excess = len(self._items) - self.capacity
        if excess <= 0:
            return
        if not self.balanced:
            victims = list(self._items)[:excess]
        else:
            # oldest item of the largest key; FIFO within each key
            queues = {}
            for counter, item in self._items.items():
                queues.setdefault(self._key(item), deque()).append(counter)
            victims = []
            for _ in range(excess):
                top = max(len(q) for q in queues.values())
                key = min((k for k, q in queues.items() if len(q) == top), key=lambda k: queues[k][0])
                victims.append(queues[key].popleft())
                if not queues[key]:
                    del queues[key]
        for counter in victims:
            item = self._items.pop(counter)
            self.trace.append({"op": "evict", "counter": counter, "slice_id": item.slice_id, "y": item.y})

    # ------------------------------------------------------------------
    # Sampling
    # ------------------------------------------------------------------

    def _materialize(self):
        if self._arrays is None:
            items = self.items
            if items:
                X = np.vstack([item.x for item in items])
            else:
                X = np.zeros((0, 0))
            y = np.asarray([item.y for item in items], dtype=np.int64)
            self._arrays = (items, X, y)
        return self._arrays

    def _choose(self, k, context):
        n = len(self._items)
        k = min(max(int(k), 0), n)
        if k == 0:
            return np.zeros(0, dtype=np.int64)
        rng = np.random.default_rng([self.seed, *[int(c) for c in context]])
        return rng.choice(n, size=k, replace=False)

    def sample(self, k, context=()):
        """min(k, size) items uniformly without replacement."""
        items, _, _ = self._materialize()
        return [items[i] for i in self._choose(k, context)]

    def sample_arrays(self, k, context=()):
        """Same draw as sample(), stacked into (X, y)."""
        _, X, y = self._materialize()
        idx = self._choose(k, context)
        if idx.size == 0:
            return np.zeros((0, X.shape[1] if X.ndim == 2 else 0)), np.zeros(0, dtype=np.int64)
        return X[idx], y[idx]

    def all_arrays(self):
        _, X, y = self._materialize()
        return X, y

    # ------------------------------------------------------------------
    # Snapshots
    # ------------------------------------------------------------------

    def to_dict(self):
        return {
            "capacity": self.capacity,
            "balanced": self.balanced,
            "seed": self.seed,
            "balance_key": self.balance_key,
            "counter": self._counter,
            "items": [
                {"x": item.x.tolist(), "y": item.y, "slice_id": item.slice_id,
                 "counter": item.counter, "concept": item.concept}
                for item in self._items.values()
            ],
        }

    @classmethod
    def from_dict(cls, data):
        buffer = cls(data["capacity"], data["balanced"], data["seed"], data["balance_key"])
        for entry in data["items"]:
            item = ReplayItem(np.asarray(entry["x"], dtype=float), entry["y"], entry["slice_id"],
                              entry["counter"], entry["concept"])
            buffer._items[item.counter] = item
        buffer._counter = data["counter"]
        return buffer

    def summary(self):
        inserts = sum(1 for e in self.trace if e["op"] == "insert")
        evicts = sum(1 for e in self.trace if e["op"] == "evict")
        return {"size": len(self), "capacity": self.capacity, "inserted": inserts, "evicted": evicts,
                "class_counts": {str(k): v for k, v in sorted(self.class_counts().items())}}


def new_buffer(capacity, balanced=True, seed=0, balance_key=LABEL):
    return ReplayBuffer(capacity, balanced=balanced, seed=seed, balance_key=balance_key)


def insert_after_slice(buffer, slice_, quota, concepts=None):
    return buffer.insert_after_slice(slice_, quota, concepts=concepts)


def sample(buffer, k, context=()):
    return buffer.sample(k, context)


def mixed_batches(slice_, buffer, batch_size, mix_ratio, seed, epoch):
    """One epoch of minibatches B = B_t ∪ B_M over the slice's training split.

    With a non-empty buffer and mix_ratio r (memory:current), each batch holds
    batch_size / (1 + r) current rows and the rest replayed rows.
    """
    order = np.random.default_rng([seed, slice_.slice_id, epoch]).permutation(slice_.train_idx)
    if len(buffer) > 0 and mix_ratio > 0:
        n_cur = max(1, int(round(batch_size / (1.0 + mix_ratio))))
        n_mem = batch_size - n_cur
    else:
        n_cur, n_mem = batch_size, 0
    for b, start in enumerate(range(0, len(order), n_cur)):
        idx = order[start:start + n_cur]
        X, y = slice_.X[idx], slice_.y[idx]
        if n_mem:
            Xm, ym = buffer.sample_arrays(n_mem, (seed, slice_.slice_id, epoch, b))
            if len(ym):
                X = np.vstack([X, Xm])
                y = np.concatenate([y, ym])
        yield X, y
