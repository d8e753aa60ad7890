import numpy as np

from kinlmc import rng as rngmod


def test_streams_are_stable_and_distinct():
    a = rngmod.stream(1, "chain", 0).standard_normal(4)
    np.testing.assert_array_equal(a, rngmod.stream(1, "chain", 0).standard_normal(4))
    assert not np.array_equal(a, rngmod.stream(1, "chain", 1).standard_normal(4))
    assert not np.array_equal(a, rngmod.stream(1, "init", 0).standard_normal(4))
    assert not np.array_equal(a, rngmod.stream(2, "chain", 0).standard_normal(4))


def test_blocks_partition_the_range():
    b = rngmod.blocks(1100, 512)
    assert b == [(0, 512), (512, 1024), (1024, 1100)]
    assert rngmod.blocks(0) == []


def test_parallel_map_preserves_order():
    assert rngmod.parallel_map(lambda v: v * v, range(10), threads=4) == [v * v for v in range(10)]


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv(rngmod.THREADS_ENV, "3")
    assert rngmod.thread_count() == 3
    monkeypatch.setenv(rngmod.THREADS_ENV, "junk")
    assert rngmod.thread_count() == 1
