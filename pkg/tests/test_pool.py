import threading

import pytest
from hypothesis import given, strategies as st

from modc.pool import MASK64, MASK128, MisalignedAddress, OutOfBounds, OutOfPoolMemory, Pool


@pytest.fixture
def pool():
    return Pool(1 << 20)


def test_alloc_is_aligned_zeroed_and_disjoint(pool):
    a = pool.alloc(24)
    b = pool.alloc(100, 64)
    assert a != 0 and a % 8 == 0
    assert b % 64 == 0 and b >= a + 24
    assert pool.read(b, 100) == bytes(100)


def test_alloc_exhaustion():
    small = Pool(4096)
    with pytest.raises(OutOfPoolMemory):
        small.alloc(8192)


def test_bounds_and_alignment(pool):
    with pytest.raises(OutOfBounds):
        pool.load64(pool.capacity)
    with pytest.raises(OutOfBounds):
        pool.load64(-8)
    with pytest.raises(MisalignedAddress):
        pool.cas64(4, 0, 1)
    with pytest.raises(MisalignedAddress):
        pool.load128(8)


def test_cas64_reports_seen_value(pool):
    a = pool.alloc(8)
    assert pool.cas64(a, 0, 7) == (True, 0)
    assert pool.cas64(a, 0, 9) == (False, 7)
    assert pool.load64(a) == 7


def test_cas128_is_all_or_nothing(pool):
    a = pool.alloc(16, 16)
    word = (5 << 64) | 6
    assert pool.cas128(a, 0, word)[0]
    assert not pool.cas128(a, 6, 1)[0]
    assert pool.load128(a) == word
    assert pool.load64(a) == 6 and pool.load64(a + 8) == 5


def test_faa_wraps(pool):
    a = pool.alloc(8)
    pool.store64(a, 1)
    assert pool.faa64(a, -2) == 1
    assert pool.load64(a) == MASK64


@given(st.integers(0, MASK128), st.integers(0, MASK128))
def test_cas128_roundtrip(old, new):
    p = Pool(4096)
    a = p.alloc(16, 16)
    p.store128(a, old)
    assert p.cas128(a, old, new) == (True, old)
    assert p.load128(a) == new


def test_concurrent_faa_is_linearizable(pool):
    a = pool.alloc(8)

    def bump():
        for _ in range(5000):
            pool.faa64(a, 1)

    threads = [threading.Thread(target=bump) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert pool.load64(a) == 20000
