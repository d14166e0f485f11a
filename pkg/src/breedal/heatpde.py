"""Implicit-Euler finite-difference solver for the 2D heat equation.

Grid layout: ``field[i, j]`` with axis 0 along x1 and axis 1 along x2.
Row 0 is the x1=0 edge (T1), row M-1 the x1=L edge (T2), column 0 the
x2=0 edge (T3) and column M-1 the x2=L edge (T4).  Corner cells follow
the priority T1 > T2 > T3 > T4, so the two x1 rows own all four corners.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, NonConvergence

N_PARAMS = 5
DEFAULT_BOUNDS = (100.0, 500.0)


@dataclass(frozen=True)
class SolverConfig:
    M: int = 64
    T_steps: int = 100
    dt: float = 0.01
    alpha: float = 1.0
    domain_length: float = 1.0
    lin_tol: float = 1e-10
    lin_max_iter: int | None = None  # None -> 10 * M**2

    def __post_init__(self):
        if self.M < 3:
            raise ConfigError(f"M must be >= 3, got {self.M}")
        if self.T_steps < 0:
            raise ConfigError(f"T_steps must be >= 0, got {self.T_steps}")
        if not self.dt > 0 or not self.alpha > 0 or not self.lin_tol > 0:
            raise ConfigError("dt, alpha and lin_tol must be positive")
        if not self.domain_length > 0:
            raise ConfigError("domain_length must be positive")
        if self.lin_max_iter is not None and self.lin_max_iter < 1:
            raise ConfigError("lin_max_iter must be >= 1")

    @property
    def dx(self) -> float:
        return self.domain_length / (self.M - 1)

    @property
    def max_iter(self) -> int:
        return self.lin_max_iter if self.lin_max_iter is not None else 10 * self.M**2


@dataclass(frozen=True)
class FieldSample:
    """One streamed trajectory timestep."""

    sim_id: int
    t: int
    field: np.ndarray  # (M, M)


def check_params(params, bounds=DEFAULT_BOUNDS) -> np.ndarray:
    temps = np.asarray(params, dtype=np.float64)
    if temps.shape != (N_PARAMS,):
        raise ConfigError(f"expected {N_PARAMS} temperatures, got shape {temps.shape}")
    low, high = bounds
    if not np.all(np.isfinite(temps)) or np.any(temps < low) or np.any(temps > high):
        raise ConfigError(f"temperatures {temps.tolist()} outside [{low}, {high}]")
    return temps


def apply_boundary(field: np.ndarray, params) -> np.ndarray:
    """Overwrite the four edges in place; later assignments win the corners."""
    _, t1, t2, t3, t4 = (float(v) for v in params)
    field[:, -1] = t4
    field[:, 0] = t3
    field[-1, :] = t2
    field[0, :] = t1
    return field


def init_field(params, cfg: SolverConfig) -> np.ndarray:
    field = np.full((cfg.M, cfg.M), float(params[0]), dtype=np.float64)
    return apply_boundary(field, params)


def _laplace_interior(v: np.ndarray, out: np.ndarray) -> np.ndarray:
    """``out = 4 v - (sum of the four neighbours)`` with zero padding."""
    np.multiply(v, 4.0, out=out)
    out[1:, :] -= v[:-1, :]
    out[:-1, :] -= v[1:, :]
    out[:, 1:] -= v[:, :-1]
    out[:, :-1] -= v[:, 1:]
    return out


def _boundary_sum(field: np.ndarray) -> np.ndarray:
    """Known boundary neighbours of each interior cell, summed."""
    b = np.zeros((field.shape[0] - 2, field.shape[1] - 2))
    b[0, :] += field[0, 1:-1]
    b[-1, :] += field[-1, 1:-1]
    b[:, 0] += field[1:-1, 0]
    b[:, -1] += field[1:-1, -1]
    return b


def conjugate_gradient(apply_op: Callable[[np.ndarray, np.ndarray], np.ndarray],
                       rhs: np.ndarray, x0: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Matrix-free CG for an SPD operator; stops on ``||r|| <= tol * ||rhs||``."""
    x = x0.copy()
    ap = np.empty_like(rhs)
    r = rhs - apply_op(x, ap)
    p = r.copy()
    rs = float(np.vdot(r, r))
    threshold = tol * max(float(np.sqrt(np.vdot(rhs, rhs))), np.finfo(float).tiny)
    for _ in range(max_iter):
        if np.sqrt(rs) <= threshold:
            return x
        apply_op(p, ap)
        step = rs / float(np.vdot(p, ap))
        x += step * p
        r -= step * ap
        rs_new = float(np.vdot(r, r))
        p *= rs_new / rs
        p += r
        rs = rs_new
    if np.sqrt(rs) <= threshold:
        return x
    raise NonConvergence(
        f"CG residual {np.sqrt(rs):.3e} above {threshold:.3e} after {max_iter} iterations")


def step(field: np.ndarray, params, cfg: SolverConfig) -> np.ndarray:
    """Advance one implicit Euler step with Dirichlet edges held fixed."""
    c = cfg.alpha * cfg.dt / cfg.dx**2
    out = np.array(field, dtype=np.float64, copy=True)
    apply_boundary(out, params)
    interior = out[1:-1, 1:-1]
    rhs = interior + c * _boundary_sum(out)

    def apply_op(v, buf):
        _laplace_interior(v, buf)
        buf *= c
        buf += v
        return buf

    out[1:-1, 1:-1] = conjugate_gradient(apply_op, rhs, interior, cfg.lin_tol, cfg.max_iter)
    return out


def trajectory(params, cfg: SolverConfig) -> Iterator[np.ndarray]:
    """Yield the fields for t = 0..T_steps."""
    field = init_field(params, cfg)
    yield field.copy()
    for _ in range(cfg.T_steps):
        field = step(field, params, cfg)
        yield field.copy()


def run_trajectory(params, cfg: SolverConfig, emit: Callable[[FieldSample], object],
                   sim_id: int = 0) -> int:
    count = 0
    for t, field in enumerate(trajectory(params, cfg)):
        emit(FieldSample(sim_id, t, field))
        count += 1
    return count
