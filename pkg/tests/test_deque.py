import threading
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from modc.pool import Pool
from modc.structures import EMPTY, RETRY, NotOwner, QueueFull, WorkQueue
from modc.structures.heartbeat import HeartbeatTable


@pytest.fixture
def q():
    return WorkQueue.create(Pool(1 << 20), owner=0, capacity=8)


def test_owner_lifo_thief_fifo(q):
    for ref in (8, 16, 24):
        q.push(0, ref)
    assert q.steal(1) == 8
    assert q.pop(0) == 24
    assert q.pop(0) == 16
    assert q.pop(0) is EMPTY
    assert q.steal(1) is EMPTY


def test_outcomes_are_falsy():
    assert not EMPTY and not RETRY


def test_only_owner_pushes_and_pops(q):
    with pytest.raises(NotOwner):
        q.push(1, 8)
    with pytest.raises(NotOwner):
        q.pop(1)


def test_capacity(q):
    for i in range(8):
        q.push(0, 8 * (i + 1))
    with pytest.raises(QueueFull):
        q.push(0, 999 * 8)
    assert len(q) == 8


def test_take_ownership_needs_dead_owner():
    pool = Pool(1 << 20)
    hb = HeartbeatTable.create(pool, 3)
    for w in range(3):
        hb.activate(w)
    q = WorkQueue.create(pool, owner=0)
    q.push(0, 8)
    assert not q.take_ownership(1, 0, hb)
    hb.pronounce_dead(0)
    assert q.take_ownership(1, 0, hb)
    assert not q.take_ownership(2, 0, hb)
    assert q.owner == 1
    assert q.pop(1) == 8


@given(st.lists(st.sampled_from(["push", "pop", "steal"]), max_size=60))
def test_matches_sequential_model(ops):
    q = WorkQueue.create(Pool(1 << 16), owner=0, capacity=64)
    model, nxt = [], 1
    for op in ops:
        if op == "push":
            q.push(0, 8 * nxt)
            model.append(8 * nxt)
            nxt += 1
        elif op == "pop":
            got = q.pop(0)
            assert got == (model.pop() if model else EMPTY)
        else:
            got = q.steal(1)
            assert got == (model.pop(0) if model else EMPTY)
    assert len(q) == len(model)


def test_threaded_stress_small():
    pool = Pool(1 << 22)
    q = WorkQueue.create(pool, owner=0, capacity=1 << 14)
    total = 5000
    taken = [[] for _ in range(4)]
    done = threading.Event()

    def thief(i):
        while not done.is_set() or q.nonempty():
            got = q.steal(i)
            if got:
                taken[i].append(got)

    threads = [threading.Thread(target=thief, args=(i,)) for i in (1, 2, 3)]
    for t in threads:
        t.start()
    for i in range(1, total + 1):
        q.push(0, i)
        if i % 3 == 0:
            got = q.pop(0)
            if got:
                taken[0].append(got)
    while (got := q.pop(0)) or q.nonempty():
        if got:
            taken[0].append(got)
    done.set()
    for t in threads:
        t.join()
    assert Counter(x for part in taken for x in part) == Counter(range(1, total + 1))
