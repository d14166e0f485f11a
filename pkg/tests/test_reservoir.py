import itertools

import numpy as np
import pytest
from scipy import stats

from breedal.errors import ConfigError, NotReady
from breedal.reservoir import Reservoir, ReservoirConfig, ReservoirEntry


def entry(j, t=0):
    return ReservoirEntry(j, t, np.zeros(5), np.zeros(4, np.float32))


def test_fill_phase():
    r = Reservoir(ReservoirConfig(capacity=4, watermark=4, batch_size=2))
    assert all(r.put(entry(j)) for j in range(4))
    assert len(r) == 4


def test_full_of_new_rejects():
    r = Reservoir(ReservoirConfig(capacity=4, watermark=4, batch_size=2))
    for j in range(4):
        r.put(entry(j))
    assert r.put(entry(9)) is False
    assert len(r) == 4 and r.rejected == 1


def test_replacement_keeps_capacity():
    r = Reservoir(ReservoirConfig(capacity=4, watermark=4, batch_size=2, seed=1))
    for j in range(4):
        r.put(entry(j))
    r.draw_batch()
    assert r.put(entry(9)) is True
    assert len(r) == 4
    assert 9 in {e.sim_id for e in r.snapshot()}


@pytest.mark.parametrize("inserted,ready", [(299, False), (300, True)])
def test_watermark(inserted, ready):
    r = Reservoir(ReservoirConfig(capacity=400, watermark=300, batch_size=128))
    for j in range(inserted):
        r.put(entry(j))
    assert r.is_ready() is ready
    if not ready:
        with pytest.raises(NotReady):
            r.draw_batch()


def test_watermark_one():
    r = Reservoir(ReservoirConfig(capacity=1, watermark=1, batch_size=1))
    r.put(entry(0))
    assert r.is_ready()


def test_exhaustive_draw():
    r = Reservoir(ReservoirConfig(capacity=4, watermark=4, batch_size=4))
    for j in range(4):
        r.put(entry(j))
    batch = r.draw_batch()
    assert sorted(e.sim_id for e in batch) == [0, 1, 2, 3]
    assert all(e.times_used == 1 and not e.is_new for e in batch)


def test_draw_frequencies_binomial():
    r = Reservoir(ReservoirConfig(capacity=4, watermark=4, batch_size=2, seed=7))
    for j in range(4):
        r.put(entry(j))
    n = 10_000
    counts = np.zeros(4)
    for _ in range(n):
        b = r.draw_batch()
        assert len({e.sim_id for e in b}) == 2
        for e in b:
            counts[e.sim_id] += 1
    std = np.sqrt(0.5 * 0.5 / n)
    assert np.all(np.abs(counts / n - 0.5) <= 3 * std)


def test_victim_uniform_over_used_entries():
    victims = []
    for trial in range(4000):
        r = Reservoir(ReservoirConfig(capacity=6, watermark=6, batch_size=4, seed=trial))
        for j in range(6):
            r.put(entry(j))
        used = {e.sim_id for e in r.draw_batch()}
        before = {e.sim_id for e in r.snapshot()}
        r.put(entry(99))
        (victim,) = before - {e.sim_id for e in r.snapshot()}
        assert victim in used
        victims.append(sorted(used).index(victim))
    observed = np.bincount(victims, minlength=4)
    assert stats.chisquare(observed).pvalue > 1e-3


class ReferenceModel:
    """Brute-force bookkeeping of which keys are present and which were drawn."""

    def __init__(self, C, W):
        self.C, self.W = C, W
        self.present = {}
        self.seen = set()

    def expect_put(self):
        if len(self.present) < self.C:
            return True
        return any(self.present.values())

    def expect_ready(self):
        return len(self.seen) >= self.W


def _check_sequence(C, W, B, ops, seed):
    res = Reservoir(ReservoirConfig(capacity=C, watermark=W, batch_size=B, seed=seed))
    model = ReferenceModel(C, W)
    next_key = 0
    for op in ops:
        if op == "put":
            expected = model.expect_put()
            before = set(model.present)
            got = res.put(entry(next_key))
            assert got == expected
            if got:
                after = {e.sim_id for e in res.snapshot()}
                gone = before - after
                assert len(gone) <= 1
                for g in gone:
                    assert model.present.pop(g) is True  # only drawn entries are replaced
                model.present[next_key] = False
                model.seen.add(next_key)
            next_key += 1
        else:
            if not model.expect_ready() or B > len(model.present):
                with pytest.raises(NotReady):
                    res.draw_batch()
            else:
                batch = res.draw_batch()
                keys = [e.sim_id for e in batch]
                assert len(set(keys)) == B and set(keys) <= set(model.present)
                for k in keys:
                    model.present[k] = True
        assert len(res) <= C
        assert len(res) == len(model.present)
        assert res.is_ready() == model.expect_ready()
        assert {e.sim_id: not e.is_new for e in res.snapshot()} == model.present


def test_exhaustive_small_cases_against_reference():
    checked = 0
    for C in range(1, 9):
        for W in sorted({1, (C + 1) // 2, C}):
            for B in sorted({1, W}):
                for ops in itertools.product(("put", "draw"), repeat=C + 3):
                    _check_sequence(C, W, B, ops, seed=checked)
                    checked += 1
    assert checked > 1000


def test_config_invariants():
    with pytest.raises(ConfigError):
        ReservoirConfig(capacity=10, watermark=11, batch_size=1)
    with pytest.raises(ConfigError):
        ReservoirConfig(capacity=10, watermark=5, batch_size=6)
