"""Dynamic group barrier in the pool.

State lives in one 128-bit word updated only by ``cas128``::

    membership_seq (48 bits) | release_seq (48 bits) | waiting (32 bits)

from the most significant end.  Membership is an initial member mask plus
an append-only change log indexed by membership epoch: the entry for epoch
``m + 1`` is written before the word moves to ``m + 1``, so the member set
of the current epoch never changes under an arriving worker's feet, and
the count it compares against is exactly the membership its ``cas128``
commits to.  Every epoch change resets ``waiting`` to zero; members that
were waiting observe the new epoch and re-arrive.

Operations that touch shared state more than once are written as
generators that yield between atomic steps, so tests can interleave them
step by step.  The plain methods drive those generators to completion.
"""

from __future__ import annotations

import enum
import time

from ..pool import Pool

__all__ = [
    "Barrier",
    "BarrierError",
    "NotMember",
    "AlreadyMember",
    "Outcome",
    "pack",
    "unpack",
    "MAX_MEMBERS",
]

MAX_MEMBERS = 64

_M_BITS, _R_BITS, _W_BITS = 48, 48, 32
_R_SHIFT = _W_BITS
_M_SHIFT = _W_BITS + _R_BITS
_W_MASK = (1 << _W_BITS) - 1
_R_MASK = (1 << _R_BITS) - 1
_M_MASK = (1 << _M_BITS) - 1

_WORD = 0
_MASK = 16
_LOGCAP = 24
_LOG = 32

_JOIN, _REMOVE = 1, 2


def pack(membership_seq: int, release_seq: int, waiting: int) -> int:
    return ((membership_seq & _M_MASK) << _M_SHIFT
            | (release_seq & _R_MASK) << _R_SHIFT
            | (waiting & _W_MASK))


def unpack(word: int) -> tuple[int, int, int]:
    return (word >> _M_SHIFT) & _M_MASK, (word >> _R_SHIFT) & _R_MASK, word & _W_MASK


class BarrierError(Exception):
    pass


class NotMember(BarrierError):
    pass


class AlreadyMember(BarrierError):
    pass


class Outcome(enum.Enum):
    RELEASED = "released"
    MEMBERSHIP_CHANGED = "membership_changed"
    CANCELLED = "cancelled"


def _drive(gen):
    try:
        while True:
            next(gen)
    except StopIteration as stop:
        return stop.value


class Barrier:
    """Handle onto a pool-resident dynamic group barrier.

    Handles are cheap; any number of workers may hold one for the same
    ``addr``.  The per-handle epoch cache only memoizes log prefixes, which
    are immutable once their epoch has been reached.
    """

    def __init__(self, pool: Pool, addr: int):
        self.pool = pool
        self.addr = addr
        self._log_cap = pool.load64(addr + _LOGCAP)
        self._masks = {0: pool.load64(addr + _MASK)}

    @classmethod
    def create(cls, pool: Pool, members=(), log_capacity: int = 128) -> "Barrier":
        addr = pool.alloc(_LOG + 8 * log_capacity, 16)
        mask = 0
        for w in members:
            if not 0 <= w < MAX_MEMBERS:
                raise ValueError(f"worker id {w} outside [0, {MAX_MEMBERS})")
            mask |= 1 << w
        pool.store64(addr + _MASK, mask)
        pool.store64(addr + _LOGCAP, log_capacity)
        return cls(pool, addr)

    def __repr__(self):
        m, r, w = unpack(self.word())
        return f"<Barrier @{self.addr} m={m} r={r} waiting={w} members={self.members()}>"

    # -- reading ----------------------------------------------------------

    def word(self) -> int:
        return self.pool.load128(self.addr + _WORD)

    def _log_entry(self, epoch: int) -> int:
        if not 1 <= epoch <= self._log_cap:
            raise BarrierError(f"membership log exhausted at epoch {epoch}")
        return self.pool.load64(self.addr + _LOG + 8 * (epoch - 1))

    def mask_at(self, epoch: int) -> int:
        """Member bitmask in effect during membership epoch ``epoch``."""
        masks = self._masks
        if epoch in masks:
            return masks[epoch]
        start = max(e for e in masks if e < epoch)
        mask = masks[start]
        for e in range(start + 1, epoch + 1):
            entry = self._log_entry(e)
            kind, w = entry >> 16, (entry & 0xFFFF) - 1
            if kind == _JOIN:
                mask |= 1 << w
            elif kind == _REMOVE:
                mask &= ~(1 << w)
            else:
                raise BarrierError(f"epoch {e} reached without a log entry")
            masks[e] = mask
        return mask

    def members(self) -> list[int]:
        """The participation vector, as the list of active member ids."""
        mask = self.mask_at(unpack(self.word())[0])
        return [w for w in range(MAX_MEMBERS) if mask >> w & 1]

    def count_active(self) -> int:
        return bin(self.mask_at(unpack(self.word())[0])).count("1")

    def is_member(self, w: int) -> bool:
        return bool(self.mask_at(unpack(self.word())[0]) >> w & 1)

    @property
    def membership_seq(self) -> int:
        return unpack(self.word())[0]

    @property
    def release_seq(self) -> int:
        return unpack(self.word())[1]

    @property
    def waiting(self) -> int:
        return unpack(self.word())[2]

    # -- membership changes -----------------------------------------------

    def _change_steps(self, kind: int, w: int):
        """Append a membership change and advance the epoch.

        Returns True if the change was applied, False if it was already in
        effect (idempotent re-issue).  A pending entry written by someone
        else is helped along before retrying.
        """
        pool = self.pool
        entry = kind << 16 | (w + 1)
        while True:
            word = self.word()
            m, r, _ = unpack(word)
            present = bool(self.mask_at(m) >> w & 1)
            if (kind == _REMOVE) != present:
                return False
            yield
            slot = self.addr + _LOG + 8 * m
            if m + 1 > self._log_cap:
                raise BarrierError("membership log exhausted")
            pending = pool.load64(slot)
            if pending == 0:
                ok, pending = pool.cas64(slot, 0, entry)
                if ok:
                    pending = entry
                yield
            bumped, _ = pool.cas128(self.addr + _WORD, word, pack(m + 1, r, 0))
            if bumped and pending == entry:
                return True
            yield

    def join_steps(self, w: int):
        if not 0 <= w < MAX_MEMBERS:
            raise ValueError(f"worker id {w} outside [0, {MAX_MEMBERS})")
        if self.is_member(w):
            raise AlreadyMember(f"worker {w} already participates")
        applied = yield from self._change_steps(_JOIN, w)
        if not applied:
            raise AlreadyMember(f"worker {w} already participates")

    def join(self, w: int) -> None:
        _drive(self.join_steps(w))

    def remove_steps(self, removed: int, by: int = -1):
        return (yield from self._change_steps(_REMOVE, removed))

    def remove(self, removed: int, by: int = -1) -> bool:
        """Drop ``removed`` from the membership; no-op if already gone."""
        return _drive(self.remove_steps(removed, by))

    # -- arrival and waiting ----------------------------------------------

    def arrive_steps(self, w: int):
        """Arrive at the barrier.

        Returns ``(Outcome.RELEASED, witness)`` if this arrival released the
        barrier, where ``witness`` is ``(replaced_word, active_count)``, or
        ``(None, token)`` when the caller is now waiting; ``token`` feeds
        :meth:`poll` and :meth:`cancel`.
        """
        pool = self.pool
        while True:
            word = self.word()
            m, r, waiting = unpack(word)
            mask = self.mask_at(m)
            if not mask >> w & 1:
                raise NotMember(f"worker {w} is not an active member")
            active = bin(mask).count("1")
            yield
            if waiting + 1 == active:
                ok, _ = pool.cas128(self.addr + _WORD, word, pack(m, r + 1, 0))
                if ok:
                    return Outcome.RELEASED, (word, active)
            else:
                ok, _ = pool.cas128(self.addr + _WORD, word, pack(m, r, waiting + 1))
                if ok:
                    return None, (m, r)
            yield

    def poll(self, token) -> Outcome | None:
        m0, r0 = token
        m, r, _ = unpack(self.word())
        # A release that raced a membership change still counts as a release.
        if r != r0:
            return Outcome.RELEASED
        if m != m0:
            return Outcome.MEMBERSHIP_CHANGED
        return None

    def cancel(self, token) -> Outcome:
        """Withdraw a waiting arrival (e.g. to go help with visible work)."""
        m0, r0 = token
        while True:
            word = self.word()
            m, r, waiting = unpack(word)
            if r != r0:
                return Outcome.RELEASED
            if m != m0:
                return Outcome.MEMBERSHIP_CHANGED
            ok, _ = self.pool.cas128(self.addr + _WORD, word, pack(m, r, waiting - 1))
            if ok:
                return Outcome.CANCELLED

    def wait_steps(self, token):
        while True:
            outcome = self.poll(token)
            if outcome is not None:
                return outcome
            yield

    def arrive_and_wait(self, w: int, pause: float = 0.0) -> Outcome:
        """Blocking arrival for thread-based callers."""
        outcome, token = _drive(self.arrive_steps(w))
        if outcome is Outcome.RELEASED:
            return outcome
        while True:
            outcome = self.poll(token)
            if outcome is not None:
                return outcome
            time.sleep(pause)
