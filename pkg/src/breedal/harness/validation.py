"""Halton-sequence validation set and its binary file format.

``validation.bin`` (little-endian): ``u32 n, u32 T_steps, u32 M`` then, per
simulation, ``5 x f64`` parameters followed by ``(T_steps+1) x M*M x f32``
temperature fields in timestep order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MissingArtifacts
from ..heatpde import N_PARAMS, SolverConfig, trajectory
from ..nn import normalize, normalize_field

PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)
_HEADER = struct.Struct("<III")


def halton(index: int, base: int) -> float:
    """Radical inverse of ``index`` (>= 1) in ``base``."""
    if index < 1:
        raise ValueError("Halton index starts at 1")
    if base < 2 or any(base % p == 0 for p in range(2, int(base**0.5) + 1)):
        raise ValueError(f"base must be prime, got {base}")
    result, scale = 0.0, 1.0
    i = index
    while i > 0:
        scale /= base
        i, digit = divmod(i, base)
        result += digit * scale
    return result


def halton_points(n: int, dims: int = N_PARAMS) -> np.ndarray:
    """First ``n`` Halton points in ``[0, 1)^dims``, starting at index 1."""
    return np.array([[halton(i, PRIMES[d]) for d in range(dims)] for i in range(1, n + 1)])


@dataclass
class ValidationSet:
    params: np.ndarray  # (n, 5) float64
    fields: np.ndarray  # (n, T_steps+1, M*M) float32

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def T_steps(self) -> int:
        return self.fields.shape[1] - 1

    @property
    def M(self) -> int:
        return int(round(np.sqrt(self.fields.shape[2])))

    def normalized(self, bounds) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(inputs, targets)`` over every (sim, timestep) pair."""
        T = self.T_steps
        t = np.tile(np.arange(T + 1), self.n)
        p = np.repeat(self.params, T + 1, axis=0)
        inputs = normalize(p, t, bounds, T).astype(np.float32)
        targets = normalize_field(self.fields.reshape(self.n * (T + 1), -1), bounds).astype(np.float32)
        return inputs, targets


def gen_validation(n: int, bounds, cfg: SolverConfig) -> ValidationSet:
    if n < 1:
        raise ValueError("validation set needs n >= 1")
    low, high = bounds
    params = low + (high - low) * halton_points(n)
    fields = np.empty((n, cfg.T_steps + 1, cfg.M * cfg.M), dtype=np.float32)
    for i, p in enumerate(params):
        for t, f in enumerate(trajectory(p, cfg)):
            fields[i, t] = f.ravel()
    return ValidationSet(params, fields)


def save_validation(vs: ValidationSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(vs.n, vs.T_steps, vs.M))
        for p, traj in zip(vs.params, vs.fields):
            fh.write(np.asarray(p, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(traj, dtype="<f4").tobytes())


def load_validation(path) -> ValidationSet:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifacts(f"validation file {path} not found")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise MissingArtifacts(f"{path} is truncated")
    n, T_steps, M = _HEADER.unpack_from(data, 0)
    per_sim = 8 * N_PARAMS + 4 * (T_steps + 1) * M * M
    if len(data) != _HEADER.size + n * per_sim:
        raise MissingArtifacts(f"{path}: size does not match header n={n}, T_steps={T_steps}, M={M}")
    params = np.empty((n, N_PARAMS))
    fields = np.empty((n, T_steps + 1, M * M), dtype=np.float32)
    offset = _HEADER.size
    for i in range(n):
        params[i] = np.frombuffer(data, "<f8", N_PARAMS, offset)
        offset += 8 * N_PARAMS
        fields[i] = np.frombuffer(data, "<f4", (T_steps + 1) * M * M, offset).reshape(T_steps + 1, -1)
        offset += 4 * (T_steps + 1) * M * M
    return ValidationSet(params, fields)
