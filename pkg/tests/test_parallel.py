"""
Tests for shard planning, random streams and the replica pool.
"""

import numpy as np
import pytest

from mbpre.accumulators import EstimatorAccumulator
from mbpre.environment import tilted_view
from mbpre.exceptions import ConfigError
from mbpre.parallel import (
    THREADS_ENV,
    ReplicaPool,
    Shard,
    plan_shards,
    resolve_threads,
    stream,
)
from mbpre.walks import _min_nonneg_shard


def uniform_shard(shard: Shard, scale: float = 1.0) -> EstimatorAccumulator:
    acc = EstimatorAccumulator()
    acc.add({"x": scale * shard.rng().random(shard.size)})
    return acc


def test_plan_shards():
    shards = plan_shards(25, 10, seed=1, purpose="test")
    assert [s.size for s in shards] == [10, 10, 5]
    assert [s.start for s in shards] == [0, 10, 20]
    assert all(s.seed == 1 and s.purpose == "test" for s in shards)


def test_plan_shards_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        plan_shards(0, 10, 1, "test")
    with pytest.raises(ConfigError):
        plan_shards(10, 0, 1, "test")


def test_streams_are_reproducible_and_distinct():
    a = stream(7, "alpha", 0).random(4)
    assert np.array_equal(a, stream(7, "alpha", 0).random(4))
    assert not np.array_equal(a, stream(7, "alpha", 1).random(4))
    assert not np.array_equal(a, stream(7, "beta", 0).random(4))
    assert not np.array_equal(a, stream(8, "alpha", 0).random(4))


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == 1
    assert resolve_threads(3) == 3
    monkeypatch.setenv(THREADS_ENV, "4")
    assert resolve_threads() == 4
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads()
    with pytest.raises(ConfigError):
        resolve_threads(0)


def test_pool_rejects_bad_shard_size():
    with pytest.raises(ConfigError):
        ReplicaPool(threads=1, shard_size=0)


def test_reduce_records_seeds():
    pool = ReplicaPool(threads=1, shard_size=10)
    acc = pool.reduce(uniform_shard, 35, seed=9, purpose="test", scale=2.0)
    assert acc.count == 35
    assert len(acc.seeds) == 4
    assert all(key[0] == 9 for key in acc.seeds)
    assert 0.0 <= acc.mean("x") <= 2.0


def test_results_do_not_depend_on_worker_count(interm_model):
    """Process pools give bit-identical merged sums."""
    kwargs = dict(model=tilted_view(interm_model), n_grid=[3, 6])
    single = ReplicaPool(threads=1, shard_size=50).reduce(
        _min_nonneg_shard, 200, 3, "test", **kwargs
    )
    multi = ReplicaPool(threads=2, shard_size=50).reduce(
        _min_nonneg_shard, 200, 3, "test", **kwargs
    )
    assert single.sums == multi.sums
    assert single.seeds == multi.seeds


def test_shard_size_changes_streams():
    small = ReplicaPool(threads=1, shard_size=10).reduce(uniform_shard, 40, 3, "test")
    large = ReplicaPool(threads=1, shard_size=20).reduce(uniform_shard, 40, 3, "test")
    assert small.sums["x"] != large.sums["x"]
