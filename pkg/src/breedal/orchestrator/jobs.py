"""Launcher-side job table with the steering-safe overwrite rule."""
from __future__ import annotations

import threading

import numpy as np

from ..breed import UNIFORM
from ..errors import ConfigError, UnknownSim

PENDING = "pending"
SUBMITTED = "submitted"
RUNNING = "running"
DONE = "done"
_ORDER = {PENDING: 0, SUBMITTED: 1, RUNNING: 2, DONE: 3}


class SteeringViolation(AssertionError):
    """An overwrite targeted a simulation the launcher may already have handed out."""


class JobTable:
    """Parameters and lifecycle state of every simulation in the budget.

    All mutations go through ``self.lock``; steering holds it across reading
    ``k`` and overwriting, which is what makes its view of submissions
    consistent.
    """

    def __init__(self, params: np.ndarray, m: int):
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 2 or params.shape[0] < 1:
            raise ConfigError("need a (S, 5) parameter array with S >= 1")
        if m < 1:
            raise ConfigError("concurrency limit m must be >= 1")
        self.params = params.copy()
        self.m = m
        self.states = [PENDING] * len(params)
        self.provenance = [UNIFORM] * len(params)
        self.generation = np.zeros(len(params), dtype=np.int64)
        self.submission_order: list[int] = []
        self.k = -1
        self.overwrites = 0
        self.lock = threading.RLock()

    @property
    def budget(self) -> int:
        return len(self.params)

    def in_flight(self) -> int:
        return sum(1 for s in self.states if s in (SUBMITTED, RUNNING))

    def n_done(self) -> int:
        return self.states.count(DONE)

    def all_done(self) -> bool:
        return self.n_done() == self.budget

    def _check(self, sim_id: int) -> None:
        if not 0 <= sim_id < self.budget:
            raise UnknownSim(f"simulation id {sim_id} outside 0..{self.budget - 1}")

    def _advance(self, sim_id: int, new: str) -> None:
        self._check(sim_id)
        old = self.states[sim_id]
        if _ORDER[new] <= _ORDER[old]:
            raise ValueError(f"sim {sim_id}: illegal transition {old} -> {new}")
        self.states[sim_id] = new

    def submit(self, sim_id: int) -> np.ndarray:
        with self.lock:
            self._advance(sim_id, SUBMITTED)
            self.submission_order.append(sim_id)
            self.k = max(self.k, sim_id)
            return self.params[sim_id].copy()

    def mark_running(self, sim_id: int) -> None:
        with self.lock:
            if self.states[sim_id] == SUBMITTED:
                self._advance(sim_id, RUNNING)
            elif self.states[sim_id] != RUNNING:
                self._check(sim_id)
                raise ValueError(f"sim {sim_id} is {self.states[sim_id]}, cannot start")

    def mark_done(self, sim_id: int) -> None:
        with self.lock:
            self._advance(sim_id, DONE)

    def steerable_ids(self) -> list[int]:
        with self.lock:
            start = self.k + self.m
            return [j for j in range(max(start, 0), self.budget) if self.states[j] == PENDING]

    def overwrite(self, ids, new_params, provenance, generation: int) -> None:
        with self.lock:
            floor = self.k + self.m
            for j in ids:
                if j < floor or self.states[j] != PENDING:
                    raise SteeringViolation(
                        f"overwrite of sim {j} (state {self.states[j]}, k={self.k}, m={self.m})")
            for j, p, tag in zip(ids, new_params, provenance):
                self.params[j] = p
                self.provenance[j] = tag
                self.generation[j] = generation
                self.overwrites += 1


def launcher_tick(table: JobTable) -> list[int]:
    """Submit pending sims in id order while slots and budget remain."""
    with table.lock:
        free = table.m - table.in_flight()
        submitted = []
        nxt = table.k + 1
        while free > 0 and nxt < table.budget:
            if table.states[nxt] == PENDING:
                table.submit(nxt)
                submitted.append(nxt)
                free -= 1
            nxt += 1
        return submitted


def steerable_ids(table: JobTable) -> list[int]:
    return table.steerable_ids()
