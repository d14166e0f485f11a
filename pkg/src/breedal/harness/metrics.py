"""CSV artifacts written during a run."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

METRICS_COLUMNS = ["iteration", "train_loss", "val_loss", "batch_mu", "batch_sigma",
                   "s", "r", "reservoir_size"]
SIMULATION_COLUMNS = ["sim_id", "lambda0", "lambda1", "lambda2", "lambda3", "lambda4",
                      "provenance", "generation", "Q_final", "q_update_iteration"]
SAMPLE_COLUMNS = ["iteration", "sim_id", "t", "loss", "batch_mu", "batch_sigma", "deviation"]


def fmt(value) -> str:
    """Shortest round-trip text for floats, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "" if np.isnan(value) else repr(float(value))
    return str(value)


@dataclass
class MetricsRow:
    iteration: int
    train_loss: float
    val_loss: Optional[float]
    batch_mu: float
    batch_sigma: float
    s: int
    r: float
    reservoir_size: int

    def cells(self) -> list[str]:
        return [fmt(getattr(self, c)) for c in METRICS_COLUMNS]


class CsvSink:
    def __init__(self, path, columns):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(columns)

    def write(self, cells) -> None:
        self._writer.writerow(cells)

    def write_many(self, rows) -> None:
        self._writer.writerows(rows)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MetricsSink(CsvSink):
    def __init__(self, path):
        super().__init__(path, METRICS_COLUMNS)
        self.last_iteration = -1

    def add(self, row: MetricsRow) -> None:
        if row.iteration <= self.last_iteration:
            raise ValueError(f"metrics iteration {row.iteration} not after {self.last_iteration}")
        self.last_iteration = row.iteration
        self.write(row.cells())


def simulation_rows(params, provenance, generation, Q, q_iteration) -> list[list[str]]:
    rows = []
    for j in range(len(params)):
        done = q_iteration[j] >= 0
        rows.append([str(j), *(fmt(float(v)) for v in params[j]), provenance[j],
                     str(int(generation[j])), fmt(float(Q[j])) if done else "",
                     str(int(q_iteration[j])) if done else ""])
    return rows


def write_simulations(path, params, provenance, generation, Q, q_iteration) -> None:
    with CsvSink(path, SIMULATION_COLUMNS) as sink:
        sink.write_many(simulation_rows(params, provenance, generation, Q, q_iteration))


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
