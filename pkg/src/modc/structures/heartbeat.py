"""Heartbeat vector, global frontier and liveness marks."""

from __future__ import annotations

from ..pool import MASK64, Pool

__all__ = ["HeartbeatTable", "FailureDetector", "INACTIVE", "ALIVE", "DEAD", "QUORUM_ALL", "QUORUM_MAJORITY"]

INACTIVE, ALIVE, DEAD = 0, 1, 2

QUORUM_ALL = 0
QUORUM_MAJORITY = MASK64

_FRONTIER = 0
_QUORUM = 8
_N = 16
_VEC = 64


class HeartbeatTable:
    """Per-worker beat counters plus a frontier advanced by quorum.

    Slots start INACTIVE (hot spares, unused ids) and move to ALIVE on
    activation; ALIVE -> DEAD is a one-way CAS.
    """

    def __init__(self, pool: Pool, addr: int):
        self.pool = pool
        self.addr = addr
        self.n = pool.load64(addr + _N)

    @classmethod
    def create(cls, pool: Pool, n: int, quorum=QUORUM_ALL) -> "HeartbeatTable":
        addr = pool.alloc(_VEC + 16 * n, 16)
        pool.store64(addr + _N, n)
        if quorum == "majority":
            quorum = QUORUM_MAJORITY
        elif quorum in (None, "all"):
            quorum = QUORUM_ALL
        pool.store64(addr + _QUORUM, quorum)
        return cls(pool, addr)

    def _beat_addr(self, w):
        return self.addr + _VEC + 8 * w

    def _status_addr(self, w):
        return self.addr + _VEC + 8 * self.n + 8 * w

    @property
    def frontier(self) -> int:
        return self.pool.load64(self.addr + _FRONTIER)

    def beats(self, w: int) -> int:
        return self.pool.load64(self._beat_addr(w))

    def status(self, w: int) -> int:
        return self.pool.load64(self._status_addr(w))

    def is_alive(self, w: int) -> bool:
        return self.status(w) == ALIVE

    def is_dead(self, w: int) -> bool:
        return self.status(w) == DEAD

    def alive(self) -> list[int]:
        return [w for w in range(self.n) if self.status(w) == ALIVE]

    def dead(self) -> list[int]:
        return [w for w in range(self.n) if self.status(w) == DEAD]

    def activate(self, w: int) -> bool:
        ok, _ = self.pool.cas64(self._status_addr(w), INACTIVE, ALIVE)
        return ok

    def beat(self, w: int) -> None:
        if self.status(w) == ALIVE:
            self.pool.faa64(self._beat_addr(w), 1)

    def quorum_size(self, n_alive: int) -> int:
        q = self.pool.load64(self.addr + _QUORUM)
        if q == QUORUM_ALL:
            return n_alive
        if q == QUORUM_MAJORITY:
            return n_alive // 2 + 1
        return min(q, n_alive)

    def advance_frontier(self) -> bool:
        """Move the frontier from v to v+1 if a quorum of live beats reached v+1."""
        v = self.frontier
        alive = self.alive()
        if not alive:
            return False
        reached = sum(1 for w in alive if self.beats(w) >= v + 1)
        if reached < self.quorum_size(len(alive)):
            return False
        ok, _ = self.pool.cas64(self.addr + _FRONTIER, v, v + 1)
        return ok

    def scan(self, now: float, timeout: float, observed: dict, me: int | None = None) -> list[int]:
        """Report live workers whose beat has not moved for ``timeout``.

        ``observed`` is the caller's private ``{worker: (beat, since)}``
        record and is updated in place.  Workers seen for the first time are
        never suspected on that scan.
        """
        suspects = []
        for w in range(self.n):
            if w == me or self.status(w) != ALIVE:
                continue
            b = self.beats(w)
            prev = observed.get(w)
            if prev is None or prev[0] != b:
                observed[w] = (b, now)
            elif now - prev[1] >= timeout:
                suspects.append(w)
        return suspects

    def pronounce_dead(self, w: int) -> bool:
        ok, _ = self.pool.cas64(self._status_addr(w), ALIVE, DEAD)
        return ok


class FailureDetector:
    """One observer's private view of the heartbeat table."""

    def __init__(self, table: HeartbeatTable, me: int, timeout: float):
        self.table = table
        self.me = me
        self.timeout = timeout
        self.observed: dict[int, tuple[int, float]] = {}

    def scan(self, now: float) -> list[int]:
        return self.table.scan(now, self.timeout, self.observed, me=self.me)
