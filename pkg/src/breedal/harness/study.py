"""Grid studies: one run directory per grid point plus a manifest.

A grid file uses the run-config format; a value with commas lists the
points of that axis, e.g. ``hidden_size=16,32,64``.  Either the model axes
(``hidden_size``, ``num_layers``, ``mode``) vary, or exactly one steering
hyperparameter (optionally crossed with ``mode``).
"""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError
from ..orchestrator.server import run
from .config import RunConfig, build_config, parse_pairs
from .metrics import CsvSink, fmt
from .validation import gen_validation, save_validation

MODEL_AXES = {"hidden_size", "num_layers", "mode"}
STEERING_AXES = {"window", "period", "width", "r_s", "r_e", "r_c"}


@dataclass(frozen=True)
class GridPoint:
    index: int
    values: dict
    config: RunConfig


def parse_grid(text: str, source: str = "<grid>") -> tuple[dict[str, str], dict[str, list[str]]]:
    fixed, axes = {}, {}
    for key, value in parse_pairs(text, source).items():
        items = [v.strip() for v in value.split(",")]
        if len(items) > 1:
            if any(not v for v in items):
                raise ConfigError(f"{source}: empty grid value for {key!r}")
            axes[key] = items
        else:
            fixed[key] = value
    return fixed, axes


def _check_axes(axes: dict) -> None:
    if not axes:
        raise ConfigError("grid has no varying key (use comma-separated values)")
    names = set(axes)
    if names <= MODEL_AXES:
        return
    steering = names - {"mode"}
    if len(steering) == 1 and steering <= STEERING_AXES:
        return
    raise ConfigError(
        f"grid must vary {sorted(MODEL_AXES)} or exactly one of {sorted(STEERING_AXES)}, got {sorted(names)}")


def _slug(values: dict) -> str:
    return "_".join(f"{k}-{v}" for k, v in values.items())


def plan_study(text: str, source: str = "<grid>") -> list[GridPoint]:
    fixed, axes = parse_grid(text, source)
    _check_axes(axes)
    base_dir = Path(fixed.pop("output_dir", "runs/study"))
    points = []
    keys = list(axes)
    for index, combo in enumerate(itertools.product(*(axes[k] for k in keys))):
        values = dict(zip(keys, combo))
        out = base_dir / f"run{index:03d}_{_slug(values)}"
        cfg = build_config({**fixed, **values}, output_dir=str(out))
        points.append(GridPoint(index, values, cfg))
    return points


def _run_point(cfg: RunConfig):
    summary = run(cfg)
    return summary.final_val_loss, summary.train_val_gap


def study(grid_path, jobs: int = 1) -> list[Path]:
    """Run every grid point; returns the run directories in grid order."""
    grid_path = Path(grid_path)
    if not grid_path.is_file():
        raise ConfigError(f"grid file {grid_path} not found")
    points = plan_study(grid_path.read_text(), str(grid_path))
    base = Path(points[0].config.output_dir).parent
    base.mkdir(parents=True, exist_ok=True)
    if points[0].config.validation_path is None:
        shapes = {(p.config.M, p.config.T_steps, p.config.validation_size, p.config.low, p.config.high)
                  for p in points}
        if len(shapes) == 1:
            first = points[0].config
            val_path = base / "validation.bin"
            save_validation(gen_validation(first.validation_size, first.bounds, first.solver_config()), val_path)
            points = [GridPoint(p.index, p.values, p.config.model_copy(update={"validation_path": str(val_path)}))
                      for p in points]
    configs = [p.config for p in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, configs))
    else:
        results = [_run_point(c) for c in configs]
    axis_names = list(points[0].values)
    with CsvSink(base / "manifest.csv", ["index", "directory", *axis_names, "final_val_loss", "train_val_gap"]) as sink:
        for p, (val, gap) in zip(points, results):
            sink.write([p.index, p.config.output_dir, *(p.values[k] for k in axis_names), fmt(val), fmt(gap)])
    return [Path(c.output_dir) for c in configs]
