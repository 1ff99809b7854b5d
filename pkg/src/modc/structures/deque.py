"""Pool-resident Chase-Lev work-stealing deque with an owner field."""

from __future__ import annotations

from ..pool import Pool

__all__ = ["WorkQueue", "QueueFull", "NotOwner", "EMPTY", "RETRY", "DEFAULT_QUEUE_CAPACITY"]

DEFAULT_QUEUE_CAPACITY = 1 << 16

_TOP = 0
_BOTTOM = 16
_OWNER = 32
_CAP = 40
_BUF = 64


class QueueFull(Exception):
    pass


class NotOwner(Exception):
    pass


class _Outcome:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name

    def __bool__(self):
        return False


EMPTY = _Outcome("EMPTY")
RETRY = _Outcome("RETRY")


class WorkQueue:
    """Fixed-capacity circular-array deque of task references.

    The owner pushes and pops at the bottom; everyone else steals from the
    top.  Task references are non-zero pool addresses.  ``top`` and
    ``bottom`` only grow, so the live window is ``[top, bottom)``.
    """

    __slots__ = ("pool", "addr", "capacity", "_mask")

    def __init__(self, pool: Pool, addr: int):
        self.pool = pool
        self.addr = addr
        self.capacity = pool.load64(addr + _CAP)
        self._mask = self.capacity - 1

    @classmethod
    def create(cls, pool: Pool, owner: int, capacity: int = DEFAULT_QUEUE_CAPACITY) -> "WorkQueue":
        if capacity <= 0 or capacity & (capacity - 1):
            raise ValueError("queue capacity must be a power of two")
        addr = pool.alloc(_BUF + 8 * capacity, 16)
        pool.store64(addr + _OWNER, owner)
        pool.store64(addr + _CAP, capacity)
        return cls(pool, addr)

    def __repr__(self):
        return f"<WorkQueue @{self.addr} owner={self.owner} size={len(self)}>"

    def __len__(self):
        return max(0, self.pool.load64(self.addr + _BOTTOM) - self.pool.load64(self.addr + _TOP))

    @property
    def owner(self) -> int:
        return self.pool.load64(self.addr + _OWNER)

    def _slot(self, i: int) -> int:
        return self.addr + _BUF + 8 * (i & self._mask)

    def _require_owner(self, caller: int):
        if self.pool.load64(self.addr + _OWNER) != caller:
            raise NotOwner(f"worker {caller} does not own {self!r}")

    def push(self, caller: int, ref: int) -> None:
        self._require_owner(caller)
        pool = self.pool
        b = pool.load64(self.addr + _BOTTOM)
        t = pool.load64(self.addr + _TOP)
        if b - t >= self.capacity:
            raise QueueFull(f"queue at capacity {self.capacity}")
        pool.store64(self._slot(b), ref)
        pool.store64(self.addr + _BOTTOM, b + 1)

    def pop(self, caller: int):
        """Owner-side LIFO take; returns a reference or ``EMPTY``."""
        self._require_owner(caller)
        pool = self.pool
        bottom = self.addr + _BOTTOM
        b = pool.load64(bottom)
        if b == 0:
            return EMPTY
        b -= 1
        pool.store64(bottom, b)
        t = pool.load64(self.addr + _TOP)
        if t > b:
            pool.store64(bottom, t)
            return EMPTY
        ref = pool.load64(self._slot(b))
        if t < b:
            return ref
        # Single element left: race the thieves for it.
        won, _ = pool.cas64(self.addr + _TOP, t, t + 1)
        pool.store64(bottom, t + 1)
        return ref if won else EMPTY

    def steal(self, caller: int):
        """Thief-side FIFO take; returns a reference, ``EMPTY`` or ``RETRY``."""
        pool = self.pool
        t = pool.load64(self.addr + _TOP)
        b = pool.load64(self.addr + _BOTTOM)
        if t >= b:
            return EMPTY
        ref = pool.load64(self._slot(t))
        won, _ = pool.cas64(self.addr + _TOP, t, t + 1)
        return ref if won else RETRY

    def nonempty(self) -> bool:
        return self.pool.load64(self.addr + _TOP) < self.pool.load64(self.addr + _BOTTOM)

    def take_ownership(self, new_owner: int, old_owner: int, heartbeats=None) -> bool:
        """Claim a dead worker's queue; exactly one claimant wins.

        ``heartbeats`` is the shared liveness table; claims against an
        owner it does not report dead are refused.
        """
        if heartbeats is not None and not heartbeats.is_dead(old_owner):
            return False
        won, _ = self.pool.cas64(self.addr + _OWNER, old_owner, new_owner)
        return won
