"""Numpy MLP surrogate ``(lambda, t) -> field`` trained with Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch goes through
as ``x @ W + b``.  Hidden layers use ReLU, the output layer is linear.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NonFiniteLoss, OutOfBounds, ShapeMismatch
from .heatpde import DEFAULT_BOUNDS, N_PARAMS

INPUT_DIM = N_PARAMS + 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_MAGIC = b"BRNN"


@dataclass(frozen=True)
class MlpConfig:
    hidden_size: int = 16
    num_layers: int = 1
    output_dim: int = 64 * 64
    input_dim: int = INPUT_DIM
    lr: float = 1e-3
    batch_size: int = 128
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if min(self.hidden_size, self.num_layers, self.batch_size, self.output_dim, self.input_dim) < 1:
            raise ConfigError("hidden_size, num_layers, batch_size and dims must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_size] * self.num_layers + [self.output_dim]


@dataclass
class TrainRecord:
    iteration: int
    sim_ids: np.ndarray
    timesteps: np.ndarray
    losses: np.ndarray  # float64, one per batch member
    mu: float
    sigma: float

    def by_key(self) -> dict[tuple[int, int], float]:
        return {(int(j), int(t)): float(l)
                for j, t, l in zip(self.sim_ids, self.timesteps, self.losses)}


class Network:
    """Parameters plus Adam state.  Mutated only by :func:`train_step`."""

    def __init__(self, config: MlpConfig):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        sizes = config.layer_sizes
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)).astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))
        self.m = [np.zeros_like(p) for p in self.parameters()]
        self.v = [np.zeros_like(p) for p in self.parameters()]
        self.step_count = 0

    def parameters(self) -> list[np.ndarray]:
        """Flat list in layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Network":
        other = Network.__new__(Network)
        other.config = self.config
        other.dtype = self.dtype
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.m = [a.copy() for a in self.m]
        other.v = [a.copy() for a in self.v]
        other.step_count = self.step_count
        return other


def normalize(params, t, bounds=DEFAULT_BOUNDS, T_steps: int = 100) -> np.ndarray:
    """Map temperatures and the timestep index into ``[0, 1]``."""
    low, high = bounds
    temps = np.asarray(params, dtype=np.float64)
    tt = np.asarray(t, dtype=np.float64)
    if np.any(temps < low) or np.any(temps > high) or not np.all(np.isfinite(temps)):
        raise OutOfBounds(f"temperatures outside [{low}, {high}]")
    if np.any(tt < 0) or np.any(tt > T_steps):
        raise OutOfBounds(f"timestep outside [0, {T_steps}]")
    scaled = (temps - low) / (high - low)
    tn = tt / T_steps if T_steps > 0 else np.zeros_like(tt)
    return np.concatenate([scaled, np.expand_dims(tn, -1)], axis=-1)


def normalize_field(field, bounds=DEFAULT_BOUNDS) -> np.ndarray:
    low, high = bounds
    return (np.asarray(field, dtype=np.float64) - low) / (high - low)


def _forward_cache(net: Network, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0) if k < last else z
        acts.append(h)
    return acts, pre


def forward(net: Network, inputs) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x = np.asarray(inputs, dtype=net.dtype)
    acts, _ = _forward_cache(net, np.atleast_2d(x))
    out = acts[-1]
    return out[0] if x.ndim == 1 else out


def per_sample_loss(pred, target) -> float | np.ndarray:
    """Mean squared error over the last axis, accumulated in float64."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    losses = np.mean(diff * diff, axis=-1)
    return float(losses) if losses.ndim == 0 else losses


def loss_and_grads(net: Network, inputs: np.ndarray, targets: np.ndarray):
    """Per-sample losses and gradients of their batch mean w.r.t. every parameter."""
    x = np.asarray(inputs, dtype=net.dtype)
    y = np.asarray(targets, dtype=net.dtype)
    acts, pre = _forward_cache(net, x)
    pred = acts[-1]
    if pred.shape != y.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
    losses = per_sample_loss(pred, y)
    batch, width = pred.shape
    delta = (2.0 / (batch * width)) * (pred - y)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        grads_w[k] = acts[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k].T) * (pre[k - 1] > 0)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return np.atleast_1d(losses), grads


def adam_update(net: Network, grads: Sequence[np.ndarray], lr: float) -> None:
    net.step_count += 1
    c1 = 1.0 - ADAM_BETA1**net.step_count
    c2 = 1.0 - ADAM_BETA2**net.step_count
    for p, g, m, v in zip(net.parameters(), grads, net.m, net.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)


def train_step(net: Network, inputs, targets, sim_ids, timesteps,
               lr: float | None = None, iteration: int | None = None) -> TrainRecord:
    """One Adam step on a full batch of ``batch_size`` normalized samples."""
    inputs = np.asarray(inputs)
    if inputs.shape[0] != net.config.batch_size:
        raise ShapeMismatch(f"batch of {inputs.shape[0]}, expected {net.config.batch_size}")
    losses, grads = loss_and_grads(net, inputs, targets)
    if not np.all(np.isfinite(losses)):
        raise NonFiniteLoss("non-finite per-sample loss in batch")
    it = net.step_count if iteration is None else iteration
    adam_update(net, grads, net.config.lr if lr is None else lr)
    return TrainRecord(
        iteration=it,
        sim_ids=np.asarray(sim_ids, dtype=np.int64),
        timesteps=np.asarray(timesteps, dtype=np.int64),
        losses=losses,
        mu=float(np.mean(losses)),
        sigma=float(np.std(losses)),
    )


def evaluate(net: Network, inputs, targets, chunk: int = 4096) -> float:
    """Mean per-sample loss over a fixed (already normalized) set."""
    inputs = np.asarray(inputs)
    if len(inputs) == 0:
        raise ShapeMismatch("empty validation set")
    total = 0.0
    for start in range(0, len(inputs), chunk):
        pred = forward(net, inputs[start:start + chunk])
        total += float(np.sum(per_sample_loss(np.atleast_2d(pred), np.atleast_2d(targets[start:start + chunk]))))
    return total / len(inputs)


# Checkpoint layout (little-endian):
#   4s magic "BRNN", u32 n_sizes, n_sizes x u32 layer sizes
#   then per layer: W as fan_in*fan_out f32 (row-major), b as fan_out f32
def save_checkpoint(net: Network, path) -> None:
    sizes = net.config.layer_sizes
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_checkpoint(path, config: MlpConfig | None = None) -> Network:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC or len(data) < 8:
        raise ShapeMismatch(f"{path} is not a network checkpoint")
    (n,) = struct.unpack_from("<I", data, 4)
    sizes = list(struct.unpack_from(f"<{n}I", data, 8))
    if config is None:
        config = MlpConfig(hidden_size=sizes[1], num_layers=n - 2,
                           input_dim=sizes[0], output_dim=sizes[-1])
    if config.layer_sizes != sizes:
        raise ShapeMismatch(f"checkpoint sizes {sizes} do not match {config.layer_sizes}")
    net = Network(config)
    offset = 8 + 4 * n
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = np.frombuffer(data, "<f4", fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += 4 * fan_in * fan_out
        b = np.frombuffer(data, "<f4", fan_out, offset)
        offset += 4 * fan_out
        net.weights[k] = w.astype(net.dtype)
        net.biases[k] = b.astype(net.dtype)
    if offset != len(data):
        raise ShapeMismatch(f"checkpoint {path} has {len(data) - offset} trailing bytes")
    return net
