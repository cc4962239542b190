"""FIFO replay buffer with inverse-draw-count sampling and readiness gating."""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graph import ProofMethod


class BufferError(Exception):
    pass


class NotReadyError(BufferError):
    """Sampling was requested before the readiness gate opened."""


@dataclass(frozen=True)
class BufferParams:
    capacity: int = 4096
    max_draws: int = 4      # least-seen example must have been drawn fewer times
    min_fill: float = 0.25  # fraction of capacity that must be occupied

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.max_draws < 1:
            raise ValueError("max_draws must be >= 1")
        if not 0.0 < self.min_fill <= 1.0:
            raise ValueError("min_fill must be in (0, 1]")


@dataclass
class TrainingExample:
    """(state observation, selected action index, value target)."""

    observation: tuple[ProofMethod, ...]
    action: int
    value_target: float
    draw_count: int = 0

    def __post_init__(self):
        if not 0 <= self.action < len(self.observation):
            raise ValueError("action index out of range for observation")

    def to_json(self) -> dict:
        return {
            "observation": [
                {"id": m.id, "text": m.text, "rank": m.rank} for m in self.observation
            ],
            "action": self.action,
            "value_target": self.value_target,
            "draw_count": self.draw_count,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainingExample":
        methods = tuple(
            ProofMethod(id=m["id"], text=m["text"], rank=int(m["rank"]))
            for m in obj["observation"]
        )
        return cls(
            observation=methods,
            action=int(obj["action"]),
            value_target=float(obj["value_target"]),
            draw_count=int(obj.get("draw_count", 0)),
        )


class ReplayBuffer:
    """Multi-producer / single-consumer FIFO store of training examples.

    Examples are drawn with probability proportional to 1/(1 + draw_count),
    without replacement within one batch. Sampling is refused until the
    buffer is filled to ``min_fill`` of capacity and the least-seen example
    has been drawn fewer than ``max_draws`` times.
    """

    def __init__(self, params: BufferParams):
        self.params = params
        self._items: deque[TrainingExample] = deque()
        self._lock = threading.Lock()
        self.total_pushed = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def push(self, example: TrainingExample) -> None:
        with self._lock:
            example.draw_count = 0
            if len(self._items) == self.params.capacity:
                self._items.popleft()
            self._items.append(example)
            self.total_pushed += 1

    def extend(self, examples) -> None:
        for ex in examples:
            self.push(ex)

    def ready(self) -> bool:
        with self._lock:
            return self._ready_locked()

    def _ready_locked(self) -> bool:
        if len(self._items) < self.params.min_fill * self.params.capacity:
            return False
        return min(ex.draw_count for ex in self._items) < self.params.max_draws

    def sample_batch(self, k: int, rng: np.random.Generator) -> list[TrainingExample]:
        with self._lock:
            if not self._ready_locked():
                raise NotReadyError("buffer not ready for sampling")
            if k > len(self._items):
                raise BufferError(f"batch of {k} exceeds fill {len(self._items)}")
            items = list(self._items)
            weights = np.array([1.0 / (1 + ex.draw_count) for ex in items])
            weights /= weights.sum()
            idx = rng.choice(len(items), size=k, replace=False, p=weights)
            batch = [items[i] for i in idx]
            for ex in batch:
                ex.draw_count += 1
            return batch

    # -- persistence ---------------------------------------------------------

    def snapshot(self, path: str) -> None:
        with self._lock:
            with open(path, "w") as fh:
                for ex in self._items:
                    fh.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")

    @classmethod
    def restore(cls, path: str, params: BufferParams) -> "ReplayBuffer":
        buf = cls(params)
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                ex = TrainingExample.from_json(json.loads(line))
                draws = ex.draw_count
                buf.push(ex)
                ex.draw_count = draws
        return buf
