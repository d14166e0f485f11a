"""Run configuration and its flat ``key=value`` file format."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from ..breed import BreedConfig
from ..errors import ConfigError
from ..heatpde import SolverConfig
from ..nn import MlpConfig
from ..reservoir import ReservoirConfig


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # solver
    M: int = 32
    T_steps: int = 50
    dt: float = 0.01
    alpha: float = 1.0
    domain_length: float = 1.0
    lin_tol: float = 1e-10
    lin_max_iter: Optional[int] = None
    # network
    hidden_size: int = 16
    num_layers: int = 1
    lr: float = 1e-3
    batch_size: int = 128
    # reservoir
    capacity: int = 2000
    watermark: int = 300
    # steering
    budget: int = 200
    window: int = 200
    period: int = 200
    width: float = 5.0
    r_s: float = 0.5
    r_e: float = 0.9
    r_c: float = 3.0
    low: float = 100.0
    high: float = 500.0
    max_retries: int = 5
    shrink: float = 0.7
    # run
    m: int = 10
    mode: Literal["random", "breed"] = "breed"
    seed: int = 0
    output_dir: str = "runs/run"
    validation_size: int = 50
    validation_path: Optional[str] = None
    eval_period: int = 100
    iteration_cap: int = 20000
    train_iters_per_tick: int = 10
    sample_log_period: int = 10
    transport: Literal["inproc", "socket"] = "inproc"
    poll_interval: float = 0.01

    @model_validator(mode="after")
    def _cross_check(self):
        self.solver_config()
        self.mlp_config()
        self.reservoir_config()
        self.breed_config()
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.validation_size < 1 or self.eval_period < 1:
            raise ConfigError("validation_size and eval_period must be >= 1")
        if not self.poll_interval > 0:
            raise ConfigError("poll_interval must be positive")
        if self.iteration_cap < 0 or self.train_iters_per_tick < 1 or self.sample_log_period < 0:
            raise ConfigError("iteration_cap >= 0, train_iters_per_tick >= 1, sample_log_period >= 0")
        return self

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.low, self.high)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(M=self.M, T_steps=self.T_steps, dt=self.dt, alpha=self.alpha,
                            domain_length=self.domain_length, lin_tol=self.lin_tol,
                            lin_max_iter=self.lin_max_iter)

    def mlp_config(self) -> MlpConfig:
        return MlpConfig(hidden_size=self.hidden_size, num_layers=self.num_layers,
                         output_dim=self.M**2, lr=self.lr, batch_size=self.batch_size,
                         seed=seed_for(self.seed, "network"))

    def reservoir_config(self) -> ReservoirConfig:
        return ReservoirConfig(capacity=self.capacity, watermark=self.watermark,
                               batch_size=self.batch_size, seed=seed_for(self.seed, "reservoir"))

    def breed_config(self) -> BreedConfig:
        return BreedConfig(budget=self.budget, window=self.window, period=self.period,
                           width=self.width, r_s=self.r_s, r_e=self.r_e, r_c=self.r_c,
                           low=self.low, high=self.high, max_retries=self.max_retries,
                           shrink=self.shrink, seed=seed_for(self.seed, "breed"))


_STREAMS = ("params", "reservoir", "network", "breed")


def seed_for(seed: int, stream: str) -> int:
    """Independent integer seed for one named random stream of a run."""
    child = np.random.SeedSequence([seed, _STREAMS.index(stream)])
    return int(child.generate_state(1, dtype=np.uint32)[0])


def rng_for(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(seed_for(seed, stream))


def initial_params(cfg: RunConfig) -> np.ndarray:
    """The seeded uniform draw every run starts from."""
    rng = rng_for(cfg.seed, "params")
    return rng.uniform(cfg.low, cfg.high, size=(cfg.budget, 5))


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def build_config(values: dict, **overrides) -> RunConfig:
    merged = {k: (None if v == "" else v) for k, v in values.items()}
    merged.update(overrides)
    unknown = set(merged) - set(RunConfig.model_fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return RunConfig(**merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "config"
        raise ConfigError(f"{where}: {first['msg']}") from None


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return build_config(parse_pairs(path.read_text(), str(path)), **overrides)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.model_dump().items():
        lines.append(f"{key}={'' if value is None else value}")
    return "\n".join(lines) + "\n"
