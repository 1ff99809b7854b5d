"""In-edge compressed sparse rows, in process memory or in the pool."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..pool import Pool

__all__ = ["CsrMatrix", "EndpointOutOfRange", "build_csr"]

_HEAD = struct.Struct("<QQQQQ")  # n, nnz, row_ptr addr, col_idx addr, out_degree addr


class EndpointOutOfRange(ValueError):
    pass


@dataclass
class CsrMatrix:
    """Row ``v`` lists every source ``u`` of an edge ``u -> v``, sorted by ``u``.

    Duplicate edges appear as repeated entries, so the row sum counts
    multiplicity exactly as ``out_degree`` does.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    out_degree: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row(self, v: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[v]:self.row_ptr[v + 1]]

    def edges(self) -> np.ndarray:
        """Edge multiset as ``(src, dst)`` pairs in row order."""
        dst = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr))
        return np.stack([self.col_idx.astype(np.int64), dst], axis=1)

    def to_scipy(self) -> sp.csr_matrix:
        """Unit-weight matrix sharing ``row_ptr``/``col_idx`` (order preserved)."""
        data = np.ones(self.nnz, dtype=np.float64)
        return sp.csr_matrix((data, self.col_idx, self.row_ptr), shape=(self.n, self.n))

    # -- pool residency ---------------------------------------------------

    def to_pool(self, pool: Pool) -> int:
        """Copy the arrays into the pool; returns the address of a small header."""
        head = pool.alloc(_HEAD.size, 16)
        addrs = []
        for arr in (self.row_ptr, self.col_idx, self.out_degree):
            raw = np.ascontiguousarray(arr, dtype=np.int64).tobytes()
            addr = pool.alloc(max(len(raw), 8), 64)
            if raw:
                pool.write(addr, raw)
            addrs.append(addr)
        pool.write(head, _HEAD.pack(self.n, self.nnz, *addrs))
        return head

    @classmethod
    def from_pool(cls, pool: Pool, head: int) -> "CsrMatrix":
        """Zero-copy read-only view of a pool-resident matrix."""
        n, nnz, rp, ci, od = _HEAD.unpack(pool.read(head, _HEAD.size))

        def arr(addr, count):
            return np.frombuffer(pool.view(addr, 8 * count), dtype=np.int64) if count else np.zeros(0, np.int64)

        return cls(n, arr(rp, n + 1), arr(ci, nnz), arr(od, n))


def build_csr(edges, n: int) -> CsrMatrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]
    if len(edges) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise EndpointOutOfRange(f"edge endpoint outside [0, {n})")
    order = np.lexsort((src, dst))
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=row_ptr[1:])
    return CsrMatrix(n, row_ptr, src[order].copy(), np.bincount(src, minlength=n).astype(np.int64))
