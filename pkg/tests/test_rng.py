import numpy as np

from pswinfer import rng


def test_stream_is_pcg64_seedsequence():
    g = rng.stream(42, 3, 1)
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence(42, spawn_key=(3, 1))))
    np.testing.assert_array_equal(g.random(5), ref.random(5))


def test_streams_reproducible_and_distinct():
    a = rng.stream(7, 0, 1).integers(0, 2**62, 4)
    b = rng.stream(7, 0, 1).integers(0, 2**62, 4)
    c = rng.stream(7, 1, 0).integers(0, 2**62, 4)
    d = rng.stream(8, 0, 1).integers(0, 2**62, 4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_order_of_consumption_irrelevant():
    first = [rng.stream(1, k).random() for k in range(5)]
    second = [rng.stream(1, k).random() for k in reversed(range(5))][::-1]
    assert first == second


def test_tags_distinct():
    tags = {rng.STREAM_SUBSAMPLE, rng.STREAM_BOOT, rng.STREAM_COVARIATES, rng.STREAM_REALIZE}
    assert len(tags) == 4
