"""Emulated disaggregated memory pool.

One flat, byte-addressable region shared by every worker in the process.
Nothing a worker keeps privately survives its crash; everything written
here does.  Word-sized atomics are linearizable: each naturally aligned
16-byte line maps onto one lock stripe, so a 64-bit CAS and a 128-bit CAS
touching the same line serialize against each other.
"""

from __future__ import annotations

import mmap
import struct
import threading

__all__ = [
    "DEFAULT_CAPACITY",
    "MASK64",
    "MASK128",
    "Pool",
    "PoolError",
    "OutOfPoolMemory",
    "OutOfBounds",
    "MisalignedAddress",
]

DEFAULT_CAPACITY = 4 << 30
MASK64 = (1 << 64) - 1
MASK128 = (1 << 128) - 1

_U64 = struct.Struct("<Q")
_U128 = struct.Struct("<QQ")

# First line holds the allocation cursor; offset 0 is never handed out, so
# 0 doubles as the null address everywhere else.
_CURSOR = 0
_HEADER = 64


class PoolError(Exception):
    pass


class OutOfPoolMemory(PoolError):
    pass


class OutOfBounds(PoolError):
    pass


class MisalignedAddress(PoolError):
    pass


class Pool:
    """Shared memory pool with bump allocation and fabric-style atomics.

    Parameters
    ----------
    capacity : int
        Size of the logical address space in bytes. Backed by an anonymous
        mapping, so untouched pages cost nothing.
    stripes : int
        Number of lock stripes used to make read-modify-write atomics
        linearizable. Must be a power of two.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, stripes: int = 1024):
        if capacity < _HEADER + 16:
            raise ValueError("pool capacity too small")
        if stripes & (stripes - 1):
            raise ValueError("stripes must be a power of two")
        self.capacity = capacity
        self._mem = mmap.mmap(-1, capacity)
        self._locks = [threading.Lock() for _ in range(stripes)]
        self._stripe_mask = stripes - 1
        _U64.pack_into(self._mem, _CURSOR, _HEADER)

    def __repr__(self):
        return f"<Pool capacity={self.capacity} used={self.used}>"

    @property
    def used(self) -> int:
        return self.load64(_CURSOR)

    def close(self):
        self._mem.close()

    # -- allocation -------------------------------------------------------

    def alloc(self, size: int, align: int = 8) -> int:
        """Return the offset of a fresh zeroed region of ``size`` bytes."""
        if size <= 0:
            raise ValueError("allocation size must be positive")
        if align <= 0 or align & (align - 1):
            raise ValueError("alignment must be a power of two")
        while True:
            cur = self.load64(_CURSOR)
            start = (cur + align - 1) & ~(align - 1)
            end = start + size
            if end > self.capacity:
                raise OutOfPoolMemory(
                    f"cannot allocate {size} bytes ({self.capacity - cur} left)")
            ok, _ = self.cas64(_CURSOR, cur, end)
            if ok:
                return start

    # -- plain access -----------------------------------------------------

    def _check(self, addr: int, n: int):
        if addr < 0 or n < 0 or addr + n > self.capacity:
            raise OutOfBounds(f"[{addr}, {addr + n}) outside pool of {self.capacity}")

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        return self._mem[addr:addr + n]

    def write(self, addr: int, data) -> None:
        data = bytes(data)
        self._check(addr, len(data))
        self._mem[addr:addr + len(data)] = data

    def view(self, addr: int, n: int) -> memoryview:
        """Zero-copy window onto pool bytes (callers must not race writers)."""
        self._check(addr, n)
        return memoryview(self._mem)[addr:addr + n]

    # -- atomics ----------------------------------------------------------

    def _lock(self, addr: int) -> threading.Lock:
        return self._locks[(addr >> 4) & self._stripe_mask]

    def _aligned(self, addr: int, width: int):
        if addr % width:
            raise MisalignedAddress(f"address {addr} is not {width}-byte aligned")
        self._check(addr, width)

    def load64(self, addr: int) -> int:
        if addr & 7 or addr < 0:
            self._aligned(addr, 8)
        try:
            return _U64.unpack_from(self._mem, addr)[0]
        except struct.error:
            raise OutOfBounds(f"[{addr}, {addr + 8}) outside pool of {self.capacity}") from None

    def store64(self, addr: int, value: int) -> None:
        self._aligned(addr, 8)
        with self._lock(addr):
            _U64.pack_into(self._mem, addr, value & MASK64)

    def load128(self, addr: int) -> int:
        self._aligned(addr, 16)
        with self._lock(addr):
            lo, hi = _U128.unpack_from(self._mem, addr)
        return hi << 64 | lo

    def store128(self, addr: int, value: int) -> None:
        self._aligned(addr, 16)
        with self._lock(addr):
            _U128.pack_into(self._mem, addr, value & MASK64, (value >> 64) & MASK64)

    def cas64(self, addr: int, expected: int, desired: int) -> tuple[bool, int]:
        self._aligned(addr, 8)
        with self._lock(addr):
            seen = _U64.unpack_from(self._mem, addr)[0]
            if seen == expected & MASK64:
                _U64.pack_into(self._mem, addr, desired & MASK64)
                return True, seen
            return False, seen

    def cas128(self, addr: int, expected: int, desired: int) -> tuple[bool, int]:
        self._aligned(addr, 16)
        with self._lock(addr):
            lo, hi = _U128.unpack_from(self._mem, addr)
            seen = hi << 64 | lo
            if seen == expected & MASK128:
                _U128.pack_into(self._mem, addr, desired & MASK64, (desired >> 64) & MASK64)
                return True, seen
            return False, seen

    def faa64(self, addr: int, delta: int) -> int:
        self._aligned(addr, 8)
        with self._lock(addr):
            old = _U64.unpack_from(self._mem, addr)[0]
            _U64.pack_into(self._mem, addr, (old + delta) & MASK64)
        return old
