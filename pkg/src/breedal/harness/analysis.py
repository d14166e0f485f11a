"""Post-run analyses: input-deviation histograms, correlations, loss curves.

Everything here only reads run artifacts; results go to a separate
``analysis`` directory.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DegenerateInput, MissingArtifacts
from .metrics import CsvSink, fmt, read_csv

HIST_BINS = 20
SMOOTH_WINDOW = 40
CORRELATION_VARIABLES = ["iteration", "sample_loss", "batch_loss", "Q", "uniform"]
REQUIRED = ("metrics.csv", "simulations.csv", "samples.csv")


def param_deviation(params) -> float | np.ndarray:
    """Population std of the five temperatures (per row for 2D input)."""
    p = np.asarray(params, dtype=np.float64)
    out = p.std(axis=-1)
    return float(out) if out.ndim == 0 else out


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DegenerateInput("pearson needs two equal-length series of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.dot(dx, dx))
    sy = np.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise DegenerateInput("pearson is undefined for a constant series")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def moving_average(series, w: int) -> np.ndarray:
    """Trailing mean over the last ``min(w, i+1)`` values."""
    if w < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx + 1 - w, 0)
    return (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)


class RunArtifacts:
    def __init__(self, run_dir):
        self.dir = Path(run_dir)
        missing = [name for name in REQUIRED if not (self.dir / name).is_file()]
        if missing:
            raise MissingArtifacts(f"{self.dir}: missing {', '.join(missing)}")
        self.label = self.dir.name
        sims = read_csv(self.dir / "simulations.csv")
        self.sim_ids = np.array([int(r["sim_id"]) for r in sims])
        self.params = np.array([[float(r[f"lambda{d}"]) for d in range(5)] for r in sims]).reshape(-1, 5)
        self.provenance = [r["provenance"] for r in sims]
        self.Q = np.array([float(r["Q_final"]) if r["Q_final"] else np.nan for r in sims])
        self.q_iteration = np.array([float(r["q_update_iteration"]) if r["q_update_iteration"] else np.nan
                                     for r in sims])
        self.metrics = read_csv(self.dir / "metrics.csv")
        self.samples = read_csv(self.dir / "samples.csv")

    def observations(self) -> dict[str, np.ndarray]:
        """Logged per-sample observations of simulations with a final score."""
        q_by_id = dict(zip(self.sim_ids.tolist(), self.Q))
        uni_by_id = dict(zip(self.sim_ids.tolist(), (p == "uniform" for p in self.provenance)))
        cols = {name: [] for name in CORRELATION_VARIABLES}
        for r in self.samples:
            j = int(r["sim_id"])
            q = q_by_id.get(j, np.nan)
            if np.isnan(q):
                continue
            cols["iteration"].append(float(r["iteration"]))
            cols["sample_loss"].append(float(r["loss"]))
            cols["batch_loss"].append(float(r["batch_mu"]))
            cols["Q"].append(q)
            cols["uniform"].append(1.0 if uni_by_id[j] else 0.0)
        return {k: np.asarray(v) for k, v in cols.items()}


def correlation_matrix(columns: dict[str, np.ndarray]) -> np.ndarray:
    """Pairwise Pearson matrix; undefined entries (constant series) are NaN."""
    names = list(columns)
    mat = np.eye(len(names))
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            try:
                mat[a, b] = mat[b, a] = pearson(columns[names[a]], columns[names[b]])
            except DegenerateInput:
                mat[a, b] = mat[b, a] = np.nan
    return mat


def _deviation_groups(runs: list[RunArtifacts]):
    groups = []
    for run in runs:
        dev = param_deviation(run.params)
        if len(runs) > 1:
            groups.append(("run", run.label, "all", dev))
        tags = np.array(run.provenance)
        for tag in sorted(set(run.provenance)):
            groups.append(("provenance", run.label, tag, dev[tags == tag]))
    return groups


def analyze(run_dir, other_dir=None, out_dir=None) -> dict[str, Path]:
    """Write the analysis CSVs for one run, or a two-run comparison."""
    runs = [RunArtifacts(run_dir)]
    if other_dir is not None:
        runs.append(RunArtifacts(other_dir))
        if runs[1].label == runs[0].label:
            runs[0].label, runs[1].label = "run1", "run2"
    out = Path(out_dir) if out_dir is not None else runs[0].dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}

    groups = _deviation_groups(runs)
    all_dev = np.concatenate([g[3] for g in groups])
    edges = np.histogram_bin_edges(all_dev, bins=HIST_BINS) if all_dev.size else np.linspace(0, 1, HIST_BINS + 1)
    files["deviation_hist"] = out / "deviation_hist.csv"
    with CsvSink(files["deviation_hist"], ["scope", "run", "group", "bin_low", "bin_high", "count"]) as sink:
        for scope, label, group, dev in groups:
            counts, _ = np.histogram(dev, bins=edges)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                sink.write([scope, label, group, fmt(lo), fmt(hi), int(c)])
    files["deviation_means"] = out / "deviation_means.csv"
    means = []
    with CsvSink(files["deviation_means"], ["scope", "run", "group", "n", "mean_deviation"]) as sink:
        for scope, label, group, dev in groups:
            mean = float(dev.mean()) if dev.size else float("nan")
            means.append({"scope": scope, "run": label, "group": group, "n": int(dev.size), "mean": mean})
            sink.write([scope, label, group, dev.size, fmt(mean)])

    summary = {"runs": [r.label for r in runs], "deviation_means": means, "correlations": {}}
    for run in runs:
        obs = run.observations()
        mat = correlation_matrix(obs)
        suffix = "" if len(runs) == 1 else f"_{run.label}"
        key = f"correlation{suffix}"
        files[key] = out / f"correlation{suffix}.csv"
        with CsvSink(files[key], ["variable", *CORRELATION_VARIABLES]) as sink:
            for name, row in zip(CORRELATION_VARIABLES, mat):
                sink.write([name, *(fmt(float(v)) for v in row)])
        done = ~np.isnan(run.Q)
        try:
            q_vs_update = pearson(run.Q[done], run.q_iteration[done])
        except DegenerateInput:
            q_vs_update = None
        summary["correlations"][run.label] = {
            "matrix": {a: {b: (None if np.isnan(mat[i, k]) else float(mat[i, k]))
                           for k, b in enumerate(CORRELATION_VARIABLES)}
                       for i, a in enumerate(CORRELATION_VARIABLES)},
            "Q_vs_q_update_iteration": q_vs_update,
            "n_observations": int(len(obs["iteration"])),
        }

        key = f"loss_curve{suffix}"
        files[key] = out / f"loss_curve{suffix}.csv"
        it = [int(r["iteration"]) for r in run.metrics]
        train = np.array([float(r["train_loss"]) for r in run.metrics])
        smooth = moving_average(train, SMOOTH_WINDOW) if len(train) else train
        with CsvSink(files[key], ["iteration", "train_loss", "train_loss_smoothed", "val_loss"]) as sink:
            sink.write_many([i, fmt(float(a)), fmt(float(b)), r["val_loss"]]
                            for i, a, b, r in zip(it, train, smooth, run.metrics))
    files["summary"] = out / "analysis_summary.json"
    files["summary"].write_text(json.dumps(summary, indent=2))
    return files

