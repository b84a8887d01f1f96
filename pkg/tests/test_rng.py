"""Seed-derived substreams must be reproducible and mutually independent."""

import numpy as np

from sonoshadow.rng import spawn_seeds, substream


def draws(rng, n=8):
    return rng.uniform(size=n)


class TestSubstream:
    def test_same_key_same_stream(self):
        np.testing.assert_array_equal(
            draws(substream(0, "shuffle", 3)), draws(substream(0, "shuffle", 3))
        )

    def test_seed_changes_stream(self):
        assert not np.array_equal(draws(substream(0, "init")), draws(substream(1, "init")))

    def test_name_changes_stream(self):
        assert not np.array_equal(draws(substream(0, "init")), draws(substream(0, "shuffle")))

    def test_indices_change_stream(self):
        a = draws(substream(0, "inject", 5))
        b = draws(substream(0, "inject", 6))
        c = draws(substream(0, "inject"))
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_multiple_indices(self):
        a = draws(substream(0, "x", 1, 2))
        b = draws(substream(0, "x", 2, 1))
        assert not np.array_equal(a, b)


class TestSpawnSeeds:
    def test_deterministic(self):
        assert spawn_seeds(42, "corpus", 10) == spawn_seeds(42, "corpus", 10)

    def test_count_and_range(self):
        seeds = spawn_seeds(0, "corpus", 100)
        assert len(seeds) == 100
        assert all(isinstance(s, int) and 0 <= s < 2**63 for s in seeds)

    def test_distinct_within_a_batch(self):
        seeds = spawn_seeds(7, "corpus", 1000)
        assert len(set(seeds)) == 1000

    def test_prefix_stable_under_count(self):
        assert spawn_seeds(3, "corpus", 20)[:10] == spawn_seeds(3, "corpus", 10)

    def test_zero_count(self):
        assert spawn_seeds(3, "corpus", 0) == []
