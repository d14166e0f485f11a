import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from breedal.breed import (PROPOSAL, UNIFORM, BreedConfig, DeviationLedger, breed_resample, deviation,
                           importance_weights, r_value, resample_locations, sample_member)
from breedal.errors import ConfigError, DegenerateWeights, NoCompletedSimulations
from breedal.nn import TrainRecord

BOUNDS = (100.0, 500.0)


def record(sims, ts, losses, iteration=1):
    losses = np.asarray(losses, dtype=np.float64)
    return TrainRecord(iteration, np.asarray(sims), np.asarray(ts), losses,
                       float(losses.mean()), float(losses.std()))


def completed_ledger(scores, T_steps=1, iteration=1):
    """Ledger where sim j has every timestep at deviation ``scores[j]``."""
    ledger = DeviationLedger(len(scores), T_steps)
    for j, q in enumerate(scores):
        for t in range(T_steps + 1):
            ledger.record_deviations([j], [t], [q], iteration + j)
    return ledger


@pytest.mark.parametrize("l,mu,sigma,expected", [(3, 3, 2, 0.0), (5, 3, 2, 1.0), (1, 3, 2, 0.0)])
def test_deviation_examples(l, mu, sigma, expected):
    assert deviation(l, mu, sigma) == expected


def test_deviation_zero_sigma():
    assert deviation(7.0, 3.0, 0.0) == 0.0
    np.testing.assert_array_equal(deviation(np.array([1.0, 2.0]), 1.5, 0.0), [0, 0])


def test_running_mean_example():
    ledger = DeviationLedger(1, 3)
    ledger.record_deviations([0], [2], [0.5], 1)
    ledger.record_deviations([0], [2], [1.5], 2)
    assert ledger.means[0, 2] == 1.0
    assert ledger.counts[0, 2] == 2


def test_q_is_mean_over_timesteps():
    ledger = DeviationLedger(1, 1)
    ledger.record_deviations([0], [0], [1.0], 4)
    assert np.isnan(ledger.Q[0]) and ledger.n_completed == 0
    ledger.record_deviations([0], [1], [0.0], 5)
    assert ledger.Q[0] == 0.5
    assert ledger.q_iteration[0] == 5 and ledger.completed[0]


def test_record_batch_uses_batch_deviations():
    ledger = DeviationLedger(4, 0)
    losses = np.array([1.0, 2.0, 3.0, 6.0])
    ledger.record_batch(record([0, 1, 2, 3], [0, 0, 0, 0], losses, iteration=9))
    mu, sigma = losses.mean(), losses.std()
    expected = np.maximum(losses - mu, 0) / sigma
    np.testing.assert_allclose(ledger.Q, expected, rtol=1e-15)
    assert list(ledger.q_iteration) == [9] * 4


def test_flat_batch_gives_zero_scores():
    ledger = DeviationLedger(3, 0)
    ledger.record_batch(record([0, 1, 2], [0, 0, 0], [0.4, 0.4, 0.4]))
    np.testing.assert_array_equal(ledger.Q, [0, 0, 0])


def test_scale_shift_invariance():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        losses = rng.exponential(size=rng.integers(2, 64))
        a, b = rng.uniform(0.01, 100), rng.uniform(-10, 10)
        d1 = deviation(losses, losses.mean(), losses.std())
        scaled = a * losses + b
        d2 = deviation(scaled, scaled.mean(), scaled.std())
        np.testing.assert_allclose(d2, d1, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ledger_order_free(seed):
    rng = np.random.default_rng(seed)
    n_sims, T = 4, 3
    keys = [(j, t) for j in range(n_sims) for t in range(T + 1)]
    batches = []
    for i in range(6):
        pick = rng.choice(len(keys), size=5, replace=False)
        batches.append(([keys[p][0] for p in pick], [keys[p][1] for p in pick], rng.random(5)))
    a = DeviationLedger(n_sims, T)
    b = DeviationLedger(n_sims, T)
    for s, t, d in batches:
        a.record_deviations(s, t, d, 1)
    for k in rng.permutation(len(batches)):
        s, t, d = batches[k]
        b.record_deviations(s, t, d, 1)
    np.testing.assert_allclose(a.means, b.means, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_window_orders_by_update():
    ledger = completed_ledger([1.0, 2.0, 3.0])
    assert ledger.window(2) == [1, 2]
    ledger.record_deviations([0], [0], [1.0], 50)
    assert ledger.window(3) == [1, 2, 0]
    assert ledger.window(10) == [1, 2, 0]


def test_importance_weights_examples():
    np.testing.assert_allclose(importance_weights([1, 2, 3]), [0.5, 1.0, 1.5])
    np.testing.assert_array_equal(importance_weights([4, 4, 4]), [1, 1, 1])
    np.testing.assert_array_equal(importance_weights([0, 0]), [1, 1])


def test_importance_weights_sum_to_n():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        q = rng.exponential(size=rng.integers(1, 300)) * rng.uniform(1e-3, 1e3)
        w = importance_weights(q)
        assert abs(w.sum() - len(q)) <= 1e-12 * len(q)


def test_resample_point_mass(rng):
    pop = np.array([[1.0] * 5, [2.0] * 5, [3.0] * 5])
    locs, idx = resample_locations(pop, [0, 0, 1], 50, rng)
    assert np.all(idx == 2) and np.all(locs == 3.0)


def test_resample_binomial(rng):
    n = 10_000
    _, idx = resample_locations(np.zeros((2, 5)), [1, 1], n, rng)
    assert abs(np.mean(idx == 0) - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_resample_edge_cases(rng):
    locs, idx = resample_locations(np.zeros((3, 5)), [1, 1, 1], 0, rng)
    assert locs.shape == (0, 5) and idx.size == 0
    with pytest.raises(DegenerateWeights):
        resample_locations(np.zeros((3, 5)), [0, 0, 0], 4, rng)


def test_sample_member_zero_width_limit(rng):
    loc = np.array([150.0, 200, 250, 300, 350])
    x, w = sample_member(loc, 1e-300, BOUNDS, rng)
    np.testing.assert_allclose(x, loc, rtol=0, atol=1e-250)
    assert w == 1e-300


def test_sample_member_corner_falls_back(rng):
    loc = np.full(5, 100.0)
    x, w = sample_member(loc, 1e6, BOUNDS, rng)
    np.testing.assert_array_equal(x, loc)
    assert w == pytest.approx(1e6 * 0.7**5)


def test_sample_member_moments(rng):
    loc = np.array([300.0, 280, 320, 250, 350])
    n = 10_000
    draws = np.array([sample_member(loc, 5.0, BOUNDS, rng)[0] for _ in range(n)])
    assert np.all(np.abs(draws.mean(axis=0) - loc) <= 3 * 5.0 / np.sqrt(n))
    np.testing.assert_allclose(draws.std(axis=0), 5.0, rtol=0.05)


def test_sample_member_shrinks_near_edge(rng):
    loc = np.array([100.5, 300, 300, 300, 300])
    widths = [sample_member(loc, 5.0, BOUNDS, rng)[1] for _ in range(200)]
    assert min(widths) < 5.0 and max(widths) == 5.0


@pytest.mark.parametrize("s,expected", [(0, 0.5), (3, 0.7), (99, 0.7)])
def test_r_value_schedule(s, expected):
    cfg = BreedConfig(budget=10, window=10, r_s=0.5, r_e=0.7, r_c=3)
    assert r_value(s, cfg) == pytest.approx(expected, abs=1e-15)


def test_r_value_midpoint():
    cfg = BreedConfig(budget=10, window=10, r_s=0.1, r_e=0.9, r_c=4)
    assert r_value(2, cfg) == pytest.approx(0.5)


def _population(n, rng):
    return rng.uniform(*BOUNDS, size=(n, 5))


def test_breed_resample_r_one_all_proposal(rng):
    ledger = completed_ledger([1.0, 0.5, 2.0])
    cfg = BreedConfig(budget=3, window=3)
    mix = breed_resample(ledger, _population(3, rng), 200, 0, cfg, rng, r=1.0)
    assert mix.provenance == [PROPOSAL] * 200


def test_breed_resample_r_zero_uniform(rng):
    ledger = completed_ledger([1.0, 0.5, 2.0])
    cfg = BreedConfig(budget=3, window=3)
    mix = breed_resample(ledger, np.full((3, 5), 300.0), 5000, 0, cfg, rng, r=0.0)
    assert mix.provenance == [UNIFORM] * 5000
    for d in range(5):
        assert stats.kstest(mix.params[:, d], "uniform", args=(100, 400)).pvalue > 1e-3


def test_breed_resample_mixture_fraction(rng):
    ledger = completed_ledger([1.0, 0.5, 2.0, 0.0])
    cfg = BreedConfig(budget=4, window=4)
    K = 10_000
    mix = breed_resample(ledger, _population(4, rng), K, 0, cfg, rng, r=0.7)
    frac = mix.provenance.count(UNIFORM) / K
    assert abs(frac - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / K)


def test_breed_resample_concentrates_on_high_scores(rng):
    ledger = completed_ledger([0.0, 0.0, 5.0])
    pop = np.array([[120.0] * 5, [480.0] * 5, [300.0] * 5])
    cfg = BreedConfig(budget=3, window=3, width=1.0)
    mix = breed_resample(ledger, pop, 500, 0, cfg, rng, r=1.0)
    assert np.all(np.abs(mix.params - 300.0) < 10)


def test_breed_resample_window_limits_population(rng):
    ledger = completed_ledger([5.0, 1.0, 1.0])
    pop = np.array([[120.0] * 5, [480.0] * 5, [300.0] * 5])
    cfg = BreedConfig(budget=3, window=2, width=1.0)
    mix = breed_resample(ledger, pop, 300, 0, cfg, rng, r=1.0)
    # sim 0 is the oldest update and falls outside a window of 2
    assert np.all(np.abs(mix.params[:, 0] - 120.0) > 50)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 200.0), st.floats(0, 1))
def test_breed_resample_always_in_bounds(seed, width, r):
    rng = np.random.default_rng(seed)
    ledger = completed_ledger(list(rng.exponential(size=6)))
    pop = rng.uniform(*BOUNDS, size=(6, 5))
    pop[0] = 100.0
    cfg = BreedConfig(budget=6, window=6, width=width)
    mix = breed_resample(ledger, pop, 50, 1, cfg, rng, r=r)
    assert np.all(mix.params >= 100.0) and np.all(mix.params <= 500.0)


def test_breed_resample_schedule_r(rng):
    ledger = completed_ledger([1.0])
    cfg = BreedConfig(budget=5, window=1, r_s=0.5, r_e=0.9, r_c=3)
    assert breed_resample(ledger, np.full((1, 5), 300.0), 3, 0, cfg, rng).r == 0.5
    assert breed_resample(ledger, np.full((1, 5), 300.0), 3, 7, cfg, rng).r == pytest.approx(0.9)


def test_breed_resample_needs_completed(rng):
    with pytest.raises(NoCompletedSimulations):
        breed_resample(DeviationLedger(3, 2), np.zeros((3, 5)), 2, 0, BreedConfig(budget=3, window=3), rng)


@pytest.mark.parametrize("kwargs", [dict(window=0), dict(window=11), dict(period=0), dict(width=0),
                                    dict(r_s=1.5), dict(r_e=-0.1), dict(shrink=1.0)])
def test_breed_config_validation(kwargs):
    with pytest.raises(ConfigError):
        BreedConfig(budget=10, **{"window": 5, **kwargs})
