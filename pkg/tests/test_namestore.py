import threading

import pytest

from modc.namestore import ConflictingPublish, NameStore, NameTableFull, Registration
from modc.pool import Pool


@pytest.fixture
def ns():
    return NameStore.create(Pool(1 << 22), capacity=256)


def test_publish_then_get(ns):
    assert ns.get("x") is None
    ns.declare("x")
    assert ns.get("x") is None and not ns.is_ready("x")
    ns.publish("x", b"hello")
    assert ns.get("x") == b"hello" and ns.is_ready("x")
    ns.publish("empty", b"")
    assert ns.get("empty") == b""


def test_idempotent_republish(ns):
    ns.publish("x", b"abc")
    ns.publish("x", b"abc")
    ns.publish("x", b"xyz")  # same length, lenient mode
    assert ns.get("x") == b"abc"
    with pytest.raises(ConflictingPublish):
        ns.publish("x", b"abcd")


def test_strict_mode_compares_content():
    ns = NameStore.create(Pool(1 << 20), capacity=16, strict=True)
    ns.publish("x", b"abc")
    ns.publish("x", b"abc")
    with pytest.raises(ConflictingPublish):
        ns.publish("x", b"abd")


def test_waiters_released_by_last_input(ns):
    assert ns.register_waiter(8, []) is Registration.READY_NOW
    assert ns.register_waiter(16, ["a", "b"]) is Registration.PARKED
    assert ns.register_waiter(24, ["b"]) is Registration.PARKED
    assert ns.publish("a", b"1") == []
    assert sorted(ns.publish("b", b"2")) == [16, 24]
    assert ns.publish("b", b"2") == []  # already released exactly once
    assert ns.register_waiter(32, ["a", "b"]) is Registration.READY_NOW


def test_claim_once(ns):
    assert ns.claim("job", 5) == (True, 0)
    assert ns.claim("job", 6) == (False, 5)
    assert ns.producer("job") == 5


def test_table_full():
    ns = NameStore.create(Pool(1 << 20), capacity=4)
    for i in range(4):
        ns.declare(f"n{i}")
    with pytest.raises(NameTableFull):
        ns.declare("overflow")


def test_concurrent_publish_and_register_release_each_waiter_once():
    for _ in range(20):
        ns = NameStore.create(Pool(1 << 22), capacity=1024)
        names = [f"in{i}" for i in range(8)]
        released, ready_now = [], []
        lock = threading.Lock()

        def register():
            for t in range(1, 41):
                if ns.register_waiter(8 * t, names) is Registration.READY_NOW:
                    with lock:
                        ready_now.append(8 * t)

        def publish():
            for name in names:
                got = ns.publish(name, b"v")
                with lock:
                    released.extend(got)

        threads = [threading.Thread(target=register), threading.Thread(target=publish),
                   threading.Thread(target=publish)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(released + ready_now) == [8 * t for t in range(1, 41)]
