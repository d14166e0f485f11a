"""Loss-deviation scoring and importance-sampling steering of pending inputs.

The ledger turns raw per-sample losses from different training iterations
into comparable scores: each loss is measured as its clamped, std-normalized
excess over its own batch mean, averaged per (sim, timestep) and then over a
trajectory.  Scores of recently completed simulations weight a Gaussian
mixture proposal from which fresh parameters for not-yet-run simulations are
drawn, with a fraction replaced by uniform points for exploration.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateWeights, NoCompletedSimulations
from .heatpde import DEFAULT_BOUNDS, N_PARAMS
from .nn import TrainRecord

UNIFORM = "uniform"
PROPOSAL = "proposal"


@dataclass(frozen=True)
class BreedConfig:
    budget: int = 800
    window: int = 200
    period: int = 200
    width: float = 5.0
    r_s: float = 0.5
    r_e: float = 0.9
    r_c: float = 3.0
    low: float = DEFAULT_BOUNDS[0]
    high: float = DEFAULT_BOUNDS[1]
    max_retries: int = 5
    shrink: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.window <= self.budget:
            raise ConfigError(f"window must be in [1, budget], got {self.window}")
        if self.period < 1:
            raise ConfigError("period must be >= 1")
        if not self.width > 0:
            raise ConfigError("width must be positive")
        for name in ("r_s", "r_e"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.r_c < 0:
            raise ConfigError("r_c must be >= 0")
        if not self.low < self.high:
            raise ConfigError("low must be below high")
        if self.max_retries < 0 or not 0.0 < self.shrink < 1.0:
            raise ConfigError("max_retries must be >= 0 and shrink in (0, 1)")

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.low, self.high)


def deviation(l, mu, sigma):
    """Clamped excess of a loss over its batch mean, in batch-std units.

    Zero when ``sigma`` is zero: a batch of equal losses carries no ranking.
    Works elementwise on arrays of losses.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    excess = np.maximum(np.asarray(l, dtype=np.float64) - mu, 0.0)
    if sigma == 0:
        out = np.zeros_like(excess)
    else:
        out = excess / sigma
    return float(out) if out.ndim == 0 else out


class DeviationLedger:
    """Running deviation statistics per (sim, timestep) and per-sim scores."""

    def __init__(self, n_sims: int, T_steps: int):
        self.n_sims = n_sims
        self.n_times = T_steps + 1
        self.means = np.zeros((n_sims, self.n_times))
        self.counts = np.zeros((n_sims, self.n_times), dtype=np.int64)
        self.coverage = np.zeros(n_sims, dtype=np.int64)
        self.Q = np.full(n_sims, np.nan)
        self.q_iteration = np.full(n_sims, -1, dtype=np.int64)
        self._recent: OrderedDict[int, None] = OrderedDict()

    @property
    def completed(self) -> np.ndarray:
        return self.coverage == self.n_times

    @property
    def n_completed(self) -> int:
        return len(self._recent)

    def record_batch(self, record: TrainRecord) -> None:
        delta = np.atleast_1d(deviation(record.losses, record.mu, record.sigma))
        self.record_deviations(record.sim_ids, record.timesteps, delta, record.iteration)

    def record_deviations(self, sim_ids, timesteps, delta, iteration: int) -> None:
        """Fold one batch of deviation values into the running means."""
        j = np.asarray(sim_ids, dtype=np.int64)
        t = np.asarray(timesteps, dtype=np.int64)
        delta = np.asarray(delta, dtype=np.float64)
        # keys inside one batch are distinct (reservoir draws without replacement)
        first_seen = self.counts[j, t] == 0
        self.counts[j, t] += 1
        self.means[j, t] += (delta - self.means[j, t]) / self.counts[j, t]
        np.add.at(self.coverage, j[first_seen], 1)
        _, order = np.unique(j, return_index=True)
        for sim in j[np.sort(order)]:
            if self.coverage[sim] == self.n_times:
                self.Q[sim] = self.means[sim].mean()
                self.q_iteration[sim] = iteration
                self._recent[int(sim)] = None
                self._recent.move_to_end(int(sim))

    def window(self, n: int) -> list[int]:
        """The ``n`` most recently scored completed sims, oldest first."""
        if n <= 0:
            return []
        ids = list(self._recent)
        return ids[-n:]


def importance_weights(Q) -> np.ndarray:
    """Scores divided by their mean; all-zero scores fall back to uniform."""
    q = np.asarray(Q, dtype=np.float64)
    if q.size == 0:
        raise ValueError("need at least one score")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("scores must be finite and non-negative")
    mean = q.mean()
    if mean == 0:
        return np.ones_like(q)
    return q / mean


def resample_locations(population, weights, K: int, rng: np.random.Generator):
    """Multinomial draw of ``K`` rows of ``population`` with replacement.

    Returns ``(locations, indices)``.
    """
    pop = np.asarray(population, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise DegenerateWeights("negative weight")
    total = w.sum()
    if K == 0:
        return pop[:0].copy(), np.zeros(0, dtype=np.int64)
    if not total > 0:
        raise DegenerateWeights("all weights are zero")
    idx = rng.choice(len(w), size=K, replace=True, p=w / total)
    return pop[idx].copy(), idx


def _in_bounds(x: np.ndarray, bounds) -> bool:
    return bool(np.all(x >= bounds[0]) and np.all(x <= bounds[1]))


def sample_member(location, width: float, bounds, rng: np.random.Generator,
                  max_retries: int = 5, shrink: float = 0.7):
    """Draw one point from an isotropic Gaussian around ``location``.

    An out-of-bounds draw shrinks the width and retries, at most
    ``max_retries`` times; after that the location itself is returned.
    Returns the point and the (possibly shrunk) width.
    """
    loc = np.asarray(location, dtype=np.float64)
    w = float(width)
    for attempt in range(max_retries + 1):
        x = loc + w * rng.standard_normal(loc.shape)
        if _in_bounds(x, bounds):
            return x, w
        if attempt < max_retries:
            w *= shrink
    return loc.copy(), w


def r_value(s: int, cfg: BreedConfig) -> float:
    """Proposal fraction at resampling index ``s``: linear warm-up then constant."""
    if s < 0:
        raise ValueError("s must be >= 0")
    frac = 1.0 if cfg.r_c == 0 else min(s / cfg.r_c, 1.0)
    return (1.0 - frac) * cfg.r_s + frac * cfg.r_e


@dataclass
class ProposalMixture:
    locations: np.ndarray  # (K, 5)
    widths: np.ndarray  # (K,) width after any retry shrinking
    r: float
    params: np.ndarray = field(default=None)  # (K, 5) final points
    provenance: list[str] = field(default_factory=list)


def uniform_params(n: int, bounds, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(bounds[0], bounds[1], size=(n, N_PARAMS))


def breed_resample(ledger: DeviationLedger, params_of, K: int, s: int,
                   cfg: BreedConfig, rng: np.random.Generator,
                   r: float | None = None) -> ProposalMixture:
    """Draw ``K`` new parameter vectors for pending simulations.

    ``params_of`` maps sim ids to their current parameters (anything indexable
    by an integer array).  ``r`` overrides the scheduled proposal fraction.
    """
    ids = ledger.window(cfg.window)
    if not ids:
        raise NoCompletedSimulations("no simulation has a complete trajectory yet")
    if K < 1:
        raise ValueError("K must be >= 1")
    ids_arr = np.asarray(ids)
    population = np.asarray(params_of[ids_arr] if isinstance(params_of, np.ndarray)
                            else [params_of[i] for i in ids], dtype=np.float64)
    weights = importance_weights(ledger.Q[ids_arr])
    locations, _ = resample_locations(population, weights, K, rng)
    out = np.empty_like(locations)
    widths = np.empty(K)
    for k in range(K):
        out[k], widths[k] = sample_member(locations[k], cfg.width, cfg.bounds, rng,
                                          cfg.max_retries, cfg.shrink)
    r_now = r_value(s, cfg) if r is None else float(r)
    replace = rng.random(K) >= r_now
    n_uniform = int(replace.sum())
    if n_uniform:
        out[replace] = uniform_params(n_uniform, cfg.bounds, rng)
    provenance = [UNIFORM if flag else PROPOSAL for flag in replace]
    return ProposalMixture(locations=locations, widths=widths, r=r_now,
                           params=out, provenance=provenance)
