import pytest
from hypothesis import given, strategies as st

from modc.pool import Pool
from modc.structures import AlreadyMember, Barrier, NotMember, Outcome
from modc.structures.barrier import pack, unpack

from barrier_model import explore, joiner, remover, single_use_waiter, waiter


@pytest.fixture
def pool():
    return Pool(1 << 20)


@given(st.integers(0, 2**48 - 1), st.integers(0, 2**48 - 1), st.integers(0, 2**32 - 1))
def test_pack_roundtrip(m, r, w):
    assert unpack(pack(m, r, w)) == (m, r, w)


def test_last_arrival_releases_with_witness(pool):
    b = Barrier.create(pool, [0, 1, 2])
    tokens = []
    for w in (0, 1):
        outcome, token = _drive(b.arrive_steps(w))
        assert outcome is None
        tokens.append(token)
    outcome, (word, active) = _drive(b.arrive_steps(2))
    assert outcome is Outcome.RELEASED
    assert unpack(word) == (0, 0, 2) and active == 3
    assert all(b.poll(t) is Outcome.RELEASED for t in tokens)
    assert b.waiting == 0 and b.release_seq == 1


def _drive(gen):
    try:
        while True:
            next(gen)
    except StopIteration as stop:
        return stop.value


def test_removal_unblocks_waiters(pool):
    b = Barrier.create(pool, [0, 1, 2])
    _, t0 = _drive(b.arrive_steps(0))
    assert b.remove(2)
    assert b.poll(t0) is Outcome.MEMBERSHIP_CHANGED
    assert b.members() == [0, 1] and b.waiting == 0
    assert not b.remove(2)  # idempotent
    assert _drive(b.arrive_steps(0))[0] is None
    assert _drive(b.arrive_steps(1))[0] is Outcome.RELEASED


def test_join_changes_epoch(pool):
    b = Barrier.create(pool, [0])
    b.join(1)
    assert b.members() == [0, 1] and b.membership_seq == 1
    with pytest.raises(AlreadyMember):
        b.join(1)
    with pytest.raises(NotMember):
        _drive(b.arrive_steps(5))


def test_cancel_withdraws_arrival(pool):
    b = Barrier.create(pool, [0, 1])
    _, token = _drive(b.arrive_steps(0))
    assert b.waiting == 1
    assert b.cancel(token) is Outcome.CANCELLED
    assert b.waiting == 0
    _, token = _drive(b.arrive_steps(0))
    _drive(b.arrive_steps(1))
    assert b.cancel(token) is Outcome.RELEASED


def test_release_preferred_over_membership_change(pool):
    b = Barrier.create(pool, [0, 1])
    _, token = _drive(b.arrive_steps(0))
    _drive(b.arrive_steps(1))
    b.remove(1)
    assert b.poll(token) is Outcome.RELEASED


def test_log_exhaustion(pool):
    from modc.structures import BarrierError
    b = Barrier.create(pool, [0, 1], log_capacity=1)
    b.remove(1)
    with pytest.raises(BarrierError):
        b.join(1)


def _release_witnesses_ok(run):
    for entry in run.log:
        if entry[0] == "release":
            _, w, replaced, active, mask = entry
            m, r, waiting = unpack(replaced)
            assert waiting + 1 == active == bin(mask).count("1"), entry


def test_exhaustive_removal_unblocks_all_waiters():
    """Two members wait while the third is removed, over every interleaving."""
    def check(run):
        _release_witnesses_ok(run)
        assert all(run.done), f"stuck: {run.log}"
        releases = [e for e in run.log if e[0] == "release"]
        assert len(releases) == 1
        removed_at = next(e[3] for e in run.log if e[0] == "removed")
        for e in run.log:
            # anyone waiting in the epoch that the removal closed must see the change
            if e[0] == "wait" and e[2][0] < removed_at:
                w = e[1]
                later = run.log[run.log.index(e) + 1:]
                seen = next(x for x in later if x[1] == w and x[0] in ("membership_changed", "released"))
                assert seen[0] == "membership_changed"

    n = explore([0, 1, 2], [(waiter, 0), (waiter, 1), (remover, 2)], check)
    assert n > 100


def test_exhaustive_full_arrival_releases_once():
    def check(run):
        _release_witnesses_ok(run)
        assert all(run.done)
        assert [e[0] for e in run.log].count("release") == 1
        assert run.barrier.release_seq == 1

    assert explore([0, 1, 2], [(waiter, 0), (waiter, 1), (waiter, 2)], check) > 10


def test_exhaustive_join_during_arrivals():
    def check(run):
        _release_witnesses_ok(run)
        assert all(run.done), run.log
        assert run.barrier.members() == [0, 1]
        assert run.barrier.release_seq == 1

    # the joiner's own arrival is sequenced after its join, as in the runtime
    def joined_then_wait(b, w, log):
        yield from joiner(b, w, log)
        yield from single_use_waiter(b, w, log)

    assert explore([0], [(single_use_waiter, 0), (joined_then_wait, 1)], check) > 5
