import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from beckerdoring.rng import Purpose, Stream, philox4x32, uniform_pairs, uniforms

# Known-answer vectors for Philox4x32-10 from the Random123 distribution
KAT = [
    ([0, 0, 0, 0], [0, 0], [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]),
    ([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2, [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]),
    ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0],
     [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    assert philox4x32(np.array(ctr), np.array(key)).tolist() == expected


def test_stream_matches_counter_function():
    s = Stream(123, 7, Purpose.INITIAL, chunk=3)
    seq = [s.random() for _ in range(20)]
    assert seq == uniforms(123, 7, np.arange(20), Purpose.INITIAL).tolist()
    assert s.position == 20


def test_batch_prefetch_is_transparent():
    a = Stream.batch(5, [0, 3, 9], prefetch=4)
    for st_, r in zip(a, (0, 3, 9)):
        ref = Stream(5, r)
        assert [st_.random() for _ in range(50)] == [ref.random() for _ in range(50)]


def test_pairs_are_blocks():
    p = uniform_pairs(1, np.array([2, 4]), 3)
    assert p[1, 0] == uniforms(1, 4, 6) and p[1, 1] == uniforms(1, 4, 7)


def test_keys_separate_streams():
    base = uniforms(1, 0, np.arange(8))
    assert not np.array_equal(base, uniforms(2, 0, np.arange(8)))
    assert not np.array_equal(base, uniforms(1, 1, np.arange(8)))
    assert not np.array_equal(base, uniforms(1, 0, np.arange(8), Purpose.CHAIN))


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32 - 1))
def test_open_unit_interval(seed, replica):
    u = uniforms(seed, replica, np.arange(64))
    assert np.all((u > 0) & (u < 1))


def test_uniformity():
    u = uniforms(42, np.arange(200)[:, None], np.arange(100)[None, :]).ravel()
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_bad_seed():
    with pytest.raises(ValueError):
        Stream(-1)
    with pytest.raises(ValueError):
        Stream(2**64)
