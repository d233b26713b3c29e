import numpy as np
from scipy import stats

from bmlmc.rng import SeedKey, as_seed_key, generator


def test_identical_keys_identical_streams():
    k = SeedKey(7, 1, 2, 3, 4)
    assert np.array_equal(generator(k).random(50), generator(SeedKey(7, 1, 2, 3, 4)).random(50))


def test_every_field_changes_the_stream():
    base = SeedKey(7, 1, 2, 3, 4)
    draws = {tuple(generator(base).random(4))}
    for k in (SeedKey(8, 1, 2, 3, 4), SeedKey(7, 2, 2, 3, 4), SeedKey(7, 1, 3, 3, 4),
              SeedKey(7, 1, 2, 4, 4), base.with_stage(5)):
        draws.add(tuple(generator(k).random(4)))
    assert len(draws) == 6


def test_as_seed_key():
    assert as_seed_key(5) == SeedKey(5)
    k = SeedKey(1, 2)
    assert as_seed_key(k) is k


def test_seed_independence_chi_square():
    draws = np.concatenate([generator(SeedKey(2024, 0, 0, m)).random(1000) for m in range(100)])
    counts, _ = np.histogram(draws, bins=50, range=(0.0, 1.0))
    assert stats.chisquare(counts).pvalue > 1e-3
    # first draws of neighbouring keys must not be correlated
    firsts = np.array([generator(SeedKey(2024, 0, 0, m)).random(2) for m in range(100)])
    assert stats.chisquare(np.histogram(firsts[:, 0], bins=10, range=(0, 1))[0]).pvalue > 1e-3
