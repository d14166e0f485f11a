"""Fixed-capacity sample buffer between ingestion and training.

New samples fill the buffer until it holds ``capacity`` entries.  After that a
put overwrites a random entry that has already been drawn at least once; when
every entry is still unseen the put is rejected and the producer must pause
and retry.  Training draws uniform batches and may reuse entries any number
of times.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError, NotReady


@dataclass
class ReservoirEntry:
    sim_id: int
    t: int
    params: np.ndarray
    target: Any
    times_used: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.sim_id, self.t)

    @property
    def is_new(self) -> bool:
        return self.times_used == 0


@dataclass(frozen=True)
class ReservoirConfig:
    capacity: int = 2000
    watermark: int = 300
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.watermark <= self.capacity:
            raise ConfigError(
                "reservoir needs 1 <= batch_size <= watermark <= capacity, got "
                f"B={self.batch_size}, W={self.watermark}, C={self.capacity}")


class Reservoir:
    def __init__(self, config: ReservoirConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self._entries: list[ReservoirEntry] = []
        # positions of entries drawn at least once, with reverse index for O(1) removal
        self._used: list[int] = []
        self._used_at: dict[int, int] = {}
        self._seen: set[tuple[int, int]] = set()
        self._lock = threading.Lock()
        self.rejected = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def distinct_inserted(self) -> int:
        return len(self._seen)

    @property
    def used_count(self) -> int:
        return len(self._used)

    def _mark_used(self, pos: int) -> None:
        if pos not in self._used_at:
            self._used_at[pos] = len(self._used)
            self._used.append(pos)

    def _unmark_used(self, pos: int) -> None:
        idx = self._used_at.pop(pos)
        last = self._used.pop()
        if last != pos:
            self._used[idx] = last
            self._used_at[last] = idx

    def put(self, entry: ReservoirEntry) -> bool:
        with self._lock:
            entry.times_used = 0
            if len(self._entries) < self.config.capacity:
                self._entries.append(entry)
            elif self._used:
                victim = self._used[int(self.rng.integers(len(self._used)))]
                self._unmark_used(victim)
                self._entries[victim] = entry
            else:
                self.rejected += 1
                return False
            self._seen.add(entry.key)
            return True

    def is_ready(self) -> bool:
        return len(self._seen) >= self.config.watermark

    def draw_batch(self, batch_size: int | None = None) -> list[ReservoirEntry]:
        size = self.config.batch_size if batch_size is None else batch_size
        with self._lock:
            if not self.is_ready():
                raise NotReady(f"{len(self._seen)} distinct samples, watermark {self.config.watermark}")
            if size > len(self._entries):
                raise NotReady(f"batch of {size} from {len(self._entries)} entries")
            picks = self.rng.choice(len(self._entries), size=size, replace=False)
            batch = []
            for pos in picks:
                entry = self._entries[pos]
                entry.times_used += 1
                self._mark_used(int(pos))
                batch.append(entry)
            return batch

    def snapshot(self) -> list[ReservoirEntry]:
        with self._lock:
            return list(self._entries)
