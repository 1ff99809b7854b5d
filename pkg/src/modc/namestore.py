"""Named data items in the pool: futures with lock-free waiter release.

Each name maps to one slot of a fixed-capacity open-addressing table.  A
slot is claimed by CAS on its fingerprint word.  Publication is a single
``cas128`` of ``(payload_addr, payload_len | READY)`` over the zero word,
so readers never see a partially published item.

Waiting tasks hang off a per-name singly linked list.  Publishing closes
the list (sets bit 0 of its head) and then walks it; each link carries a
``done`` word so a re-run publish can finish a walk that a crash cut
short without double-counting.
"""

from __future__ import annotations

import enum
import hashlib
import time

from .pool import MASK64, Pool

__all__ = ["NameStore", "ConflictingPublish", "NameTableFull", "Registration", "PENDING", "READY"]

PENDING, READY = 0, 1

_CAP = 0
_SLOTS = 64
_SLOT_SIZE = 64

# slot layout
_S_STATE = 0        # 128-bit: lo = len << 1 | ready, hi = payload addr
_S_FP = 16
_S_NAME_LEN = 24
_S_NAME_ADDR = 32
_S_WAITERS = 40
_S_PRODUCER = 48

# waiter entry: task ref, remaining count
_E_TASK, _E_REMAINING = 0, 8
# waiter link: entry addr, next link, done flag
_L_ENTRY, _L_NEXT, _L_DONE = 0, 8, 16

_CLOSED = 1
_DEC = MASK64  # faa delta of -1


class ConflictingPublish(Exception):
    """A repeated publish disagreed with the stored payload."""


class NameTableFull(Exception):
    pass


class Registration(enum.Enum):
    READY_NOW = "ready_now"
    PARKED = "parked"


def fingerprint(name: bytes) -> int:
    fp = int.from_bytes(hashlib.blake2b(name, digest_size=8).digest(), "little")
    return fp or 1


def _key(name) -> bytes:
    return name.encode() if isinstance(name, str) else bytes(name)


class NameStore:
    def __init__(self, pool: Pool, addr: int, strict: bool = False):
        self.pool = pool
        self.addr = addr
        self.capacity = pool.load64(addr + _CAP)
        self._mask = self.capacity - 1
        self.strict = strict

    @classmethod
    def create(cls, pool: Pool, capacity: int = 1 << 16, strict: bool = False) -> "NameStore":
        if capacity & (capacity - 1):
            raise ValueError("name table capacity must be a power of two")
        addr = pool.alloc(_SLOTS + _SLOT_SIZE * capacity, 64)
        pool.store64(addr + _CAP, capacity)
        return cls(pool, addr, strict=strict)

    def _slot(self, i: int) -> int:
        return self.addr + _SLOTS + _SLOT_SIZE * (i & self._mask)

    def _name_at(self, slot: int) -> bytes:
        pool = self.pool
        # The claimer publishes the name right after winning the slot.
        while (addr := pool.load64(slot + _S_NAME_ADDR)) == 0:
            time.sleep(0)
        return pool.read(addr, pool.load64(slot + _S_NAME_LEN))

    def _find(self, key: bytes, create: bool) -> int | None:
        pool = self.pool
        fp = fingerprint(key)
        for probe in range(self.capacity):
            slot = self._slot(fp + probe)
            seen = pool.load64(slot + _S_FP)
            if seen == 0:
                if not create:
                    return None
                ok, seen = pool.cas64(slot + _S_FP, 0, fp)
                if ok:
                    name_addr = pool.alloc(max(len(key), 1))
                    pool.write(name_addr, key)
                    pool.store64(slot + _S_NAME_LEN, len(key))
                    pool.store64(slot + _S_NAME_ADDR, name_addr)
                    return slot
            if seen == fp and self._name_at(slot) == key:
                return slot
        if create:
            raise NameTableFull(f"no free slot for {key!r}")
        return None

    # -- public surface ---------------------------------------------------

    def declare(self, name) -> int:
        """Ensure a PENDING entry exists for ``name``; returns its handle."""
        return self._find(_key(name), create=True)

    def handle(self, name) -> int | None:
        return self._find(_key(name), create=False)

    def state(self, name) -> int | None:
        slot = self.handle(name)
        if slot is None:
            return None
        return self.pool.load128(slot + _S_STATE) & 1

    def is_ready(self, name) -> bool:
        return self.state(name) == READY

    def get(self, name) -> bytes | None:
        """Payload of a READY item, or None while absent or pending."""
        slot = self.handle(name)
        if slot is None:
            return None
        word = self.pool.load128(slot + _S_STATE)
        if not word & 1:
            return None
        length = (word & MASK64) >> 1
        return self.pool.read(word >> 64, length) if length else b""

    def claim(self, name, token: int) -> tuple[bool, int]:
        """Record ``token`` as the item's producer if none is recorded yet."""
        slot = self.declare(name)
        return self.pool.cas64(slot + _S_PRODUCER, 0, token)

    def producer(self, name) -> int:
        slot = self.handle(name)
        return 0 if slot is None else self.pool.load64(slot + _S_PRODUCER)

    def publish(self, name, payload) -> list[int]:
        """Publish ``payload`` under ``name``; returns task refs it released.

        Publishing an already READY item with the same length is a no-op
        apart from finishing any interrupted waiter release.
        """
        payload = bytes(payload)
        pool = self.pool
        slot = self.declare(name)
        word = pool.load128(slot + _S_STATE)
        if not word & 1:
            addr = pool.alloc(max(len(payload), 1))
            if payload:
                pool.write(addr, payload)
            ok, word = pool.cas128(slot + _S_STATE, 0, addr << 64 | len(payload) << 1 | 1)
            if ok:
                word = 0
        if word:
            self._check_duplicate(name, word, payload)
        return self._release_waiters(slot)

    def _check_duplicate(self, name, word: int, payload: bytes):
        length = (word & MASK64) >> 1
        if length != len(payload):
            raise ConflictingPublish(
                f"{name!r} already holds {length} bytes, re-publish carried {len(payload)}")
        if self.strict and self.pool.read(word >> 64, length) != payload:
            raise ConflictingPublish(f"{name!r} re-published with different content")

    def _release_waiters(self, slot: int) -> list[int]:
        pool = self.pool
        head_addr = slot + _S_WAITERS
        while True:
            head = pool.load64(head_addr)
            if head & _CLOSED:
                break
            ok, _ = pool.cas64(head_addr, head, head | _CLOSED)
            if ok:
                head |= _CLOSED
                break
        released = []
        link = head & ~_CLOSED
        while link:
            won, _ = pool.cas64(link + _L_DONE, 0, 1)
            if won:
                entry = pool.load64(link + _L_ENTRY)
                if pool.faa64(entry + _E_REMAINING, _DEC) == 1:
                    released.append(pool.load64(entry + _E_TASK))
            link = pool.load64(link + _L_NEXT)
        return released

    def register_waiter(self, task: int, inputs) -> Registration:
        """Gate ``task`` on every name in ``inputs`` becoming READY.

        READY_NOW means the caller must enqueue the task itself; PARKED
        means the publish that satisfies the last input will return it.
        """
        inputs = list(inputs)
        if not inputs:
            return Registration.READY_NOW
        pool = self.pool
        entry = pool.alloc(16)
        pool.store64(entry + _E_TASK, task)
        # One extra count held until every input has been looked at.
        pool.store64(entry + _E_REMAINING, len(inputs) + 1)
        satisfied = 0
        for name in inputs:
            slot = self.declare(name)
            if pool.load128(slot + _S_STATE) & 1:
                satisfied += 1
                continue
            link = pool.alloc(24)
            pool.store64(link + _L_ENTRY, entry)
            head_addr = slot + _S_WAITERS
            while True:
                head = pool.load64(head_addr)
                if head & _CLOSED:
                    satisfied += 1
                    break
                pool.store64(link + _L_NEXT, head)
                ok, _ = pool.cas64(head_addr, head, link)
                if ok:
                    break
        old = pool.faa64(entry + _E_REMAINING, -(satisfied + 1))
        if old == satisfied + 1:
            return Registration.READY_NOW
        return Registration.PARKED
