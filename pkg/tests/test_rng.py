import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from needlestream.rng import (RandomTape, chunk_generator, derive_seed, enumerate_outcomes, iter_chunks, prf,
                              prf_extend, prf_unit, stream_key, to_unit)


def test_stream_key_depends_on_every_label():
    assert stream_key(1, "a") == stream_key(1, "a")
    assert stream_key(1, "a") != stream_key(2, "a")
    assert stream_key(1, "a") != stream_key(1, "b")
    assert derive_seed(5, "x", 3) != derive_seed(5, "x", 4)


def test_chunks_replay_in_any_order():
    first = [chunk_generator(7, "s", c).random(4) for c in range(3)]
    again = [chunk_generator(7, "s", c).random(4) for c in reversed(range(3))][::-1]
    for a, b in zip(first, again):
        assert np.array_equal(a, b)
    assert not np.array_equal(first[0], first[1])


@given(st.integers(0, 2 ** 63), st.lists(st.integers(-2 ** 40, 2 ** 40), min_size=1, max_size=6))
def test_prf_extend_matches_full_hash(key, parts):
    acc = prf(key, *parts[:-1]) if len(parts) > 1 else prf(key)
    assert np.array_equal(prf_extend(acc, parts[-1]), prf(key, *parts))


@given(st.integers(0, 2 ** 63))
def test_unit_maps_into_half_open_interval(key):
    u = prf_unit(key, np.arange(50))
    assert ((u >= 0) & (u < 1)).all()
    assert np.array_equal(u, to_unit(prf(key, np.arange(50))))


def test_prf_unit_roughly_uniform():
    u = prf_unit(3, np.arange(100000))
    hist, _ = np.histogram(u, bins=10, range=(0, 1))
    assert hist.min() > 9500 and hist.max() < 10500


def test_enumerate_outcomes_bernoulli_and_categorical():
    pmf = enumerate_outcomes(lambda tape: (tuple(tape.bernoulli(0.25, 2)), tape.categorical([0.5, 0.5])))
    assert sum(pmf.values()) == pytest.approx(1.0)
    assert pmf[((True, True), 0)] == pytest.approx(0.0625 * 0.5)
    assert len(pmf) == 8


def test_enumerate_outcomes_integers_are_uniform():
    pmf = enumerate_outcomes(lambda tape: tuple(tape.integers(1, 4, 2)))
    assert len(pmf) == 9
    assert all(v == pytest.approx(1 / 9) for v in pmf.values())


def test_enumeration_budget():
    with pytest.raises(RuntimeError):
        enumerate_outcomes(lambda tape: tuple(tape.integers(0, 10, 3)), max_paths=10)


def test_random_tape_categorical_single_outcome():
    tape = RandomTape.keyed(0, "x")
    assert tape.categorical([1.0]) == 0
    assert tape.integer(5, 6) == 5


def test_iter_chunks_covers_range():
    parts = list(iter_chunks(10, 4))
    assert parts == [(0, 0, 4), (1, 4, 4), (2, 8, 2)]
    assert list(iter_chunks(0, 4)) == []
