"""PageRank over the task runtime by recursive row decomposition, plus its oracle.

Iteration ``it`` maps ``rank:it`` to ``rank:it+1`` and runs as job ``it``.
Each job holds one ``spmv`` root task over all rows, which splits until
every leaf has at most ``target_rows`` rows, and one ``pagerank`` task that
spawns the next job.  A leaf publishes its rows of the new vector as the
named segment ``rank:<it+1>:<begin>:<end>``.

Every output element is produced by exactly one leaf with the summation
order fixed by the CSR row, so results are bitwise independent of worker
count, task size and crash schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..runtime import Runtime
from .csr import CsrMatrix

__all__ = [
    "DAMPING",
    "PartitionSpec",
    "split_point",
    "leaf_ranges",
    "tree_task_count",
    "pagerank_task_count",
    "segment_name",
    "next_ranks",
    "oracle_pagerank",
    "install_pagerank",
    "pagerank_driver",
    "PageRankResult",
]

DAMPING = 0.85


@dataclass(frozen=True)
class PartitionSpec:
    row_begin: int
    row_end: int
    target_rows: int

    def __post_init__(self):
        if not 0 <= self.row_begin < self.row_end:
            raise ValueError(f"empty or inverted range [{self.row_begin}, {self.row_end})")
        if self.target_rows < 1:
            raise ValueError("target_rows must be positive")

    @property
    def rows(self) -> int:
        return self.row_end - self.row_begin

    @property
    def is_leaf(self) -> bool:
        return self.rows <= self.target_rows

    def split(self) -> tuple["PartitionSpec", "PartitionSpec"]:
        mid = split_point(self.row_begin, self.row_end, self.target_rows)
        return (PartitionSpec(self.row_begin, mid, self.target_rows),
                PartitionSpec(mid, self.row_end, self.target_rows))


def split_point(begin: int, end: int, target: int) -> int:
    """Split so the two halves need ceil(k/2) and floor(k/2) leaves.

    With ``k = ceil(rows / target)`` this yields exactly ``k`` leaves in
    total, each of at most ``target`` rows.
    """
    rows = end - begin
    k = -(-rows // target)
    kl = k - k // 2
    return begin + -(-rows * kl // k)


def leaf_ranges(begin: int, end: int, target: int) -> list[tuple[int, int]]:
    """Leaves of the decomposition tree, left to right."""
    out, stack = [], [(begin, end)]
    while stack:
        b, e = stack.pop()
        if e - b <= target:
            out.append((b, e))
        else:
            mid = split_point(b, e, target)
            stack.append((mid, e))
            stack.append((b, mid))
    return out


def tree_task_count(rows: int, target: int) -> int:
    """Nodes in the binary decomposition tree: 2k - 1 for k leaves."""
    return 2 * -(-rows // target) - 1


def pagerank_task_count(n: int, target: int, iters: int) -> int:
    """Tasks executed by a failure-free driver run: a tree plus one driver task per iteration."""
    return iters * (tree_task_count(n, target) + 1)


def segment_name(it: int, begin: int, end: int) -> str:
    return f"rank:{it}:{begin}:{end}"


# -- numerics ---------------------------------------------------------------

def _contributions(rank: np.ndarray, out_degree: np.ndarray, n: int):
    contrib = np.zeros(n, dtype=np.float64)
    has_out = out_degree > 0
    contrib[has_out] = rank[has_out] / out_degree[has_out]
    dangling = math.fsum(rank[~has_out].tolist())
    return contrib, dangling / n


def _finish_rows(sums: np.ndarray, n: int, teleport: float, delta: float) -> np.ndarray:
    return (1.0 - delta) / n + delta * (sums + teleport)


def next_ranks(matrix, rank, out_degree, delta: float = DAMPING, rows=None) -> np.ndarray:
    """One power-iteration step over ``rows`` (default: all).

    ``matrix`` is the unit-weight in-edge scipy CSR.  Its row products sum
    each row left to right, matching :func:`oracle_pagerank` exactly.
    """
    n = matrix.shape[0]
    contrib, teleport = _contributions(np.asarray(rank, dtype=np.float64), out_degree, n)
    b, e = rows or (0, n)
    return _finish_rows(matrix[b:e] @ contrib, n, teleport, delta)


_ORACLE_CACHE: dict = {}


def oracle_pagerank(csr: CsrMatrix, iters: int, delta: float = DAMPING, history: bool = False):
    """Sequential reference power iteration in plain Python floats.

    Returns the final rank vector, or every vector ``rank:0..iters`` when
    ``history`` is set.  Results are memoized per matrix content.
    """
    key = (csr.n, csr.nnz, hash(csr.row_ptr.tobytes()), hash(csr.col_idx.tobytes()), delta)
    seen = _ORACLE_CACHE.setdefault(key, [])
    n = csr.n
    if not seen:
        seen.append(np.full(n, 1.0 / n) if n else np.zeros(0))
    row_ptr = csr.row_ptr.tolist()
    cols = csr.col_idx.tolist()
    outdeg = csr.out_degree.tolist()
    base = (1.0 - delta) / n if n else 0.0
    while len(seen) <= iters:
        rank = seen[-1].tolist()
        contrib = [r / d if d else 0.0 for r, d in zip(rank, outdeg)]
        teleport = math.fsum(r for r, d in zip(rank, outdeg) if d == 0) / n
        new = []
        for v in range(n):
            s = 0.0
            for j in range(row_ptr[v], row_ptr[v + 1]):
                s += contrib[cols[j]]
            new.append(base + delta * (s + teleport))
        seen.append(np.array(new, dtype=np.float64))
    if history:
        return [v.copy() for v in seen[:iters + 1]]
    return seen[iters].copy()


# -- task functions -----------------------------------------------------------

def _matrix(ctx, head: int):
    key = ("csr", head)
    got = ctx.cache.get(key)
    if got is None:
        csr = CsrMatrix.from_pool(ctx.runtime.pool, head)
        got = ctx.cache[key] = (csr.to_scipy(), csr.out_degree, csr.n)
    return got


def _vector(ctx, it: int, leaves) -> np.ndarray:
    parts = [np.frombuffer(ctx.get(segment_name(it, b, e)), dtype=np.float64) for b, e in leaves]
    return np.concatenate(parts)


def spmv_task(ctx, args):
    """Split the row range in two, or compute it as a leaf."""
    it, b, e, target = args["it"], args["b"], args["e"], args["target"]
    if e - b > target:
        mid = split_point(b, e, target)
        for lo, hi in ((b, mid), (mid, e)):
            _spawn_spmv(ctx, args, lo, hi)
        return {}
    matrix, out_degree, n = _matrix(ctx, args["csr"])
    costs = ctx.runtime.costs
    key = ("contrib", args["csr"], it)
    cached = ctx.cache.get(key)
    if cached is None:
        for stale in [k for k in ctx.cache if k[0] == "contrib" and k[1] == args["csr"] and k[2] < it]:
            del ctx.cache[stale]
        rank = _vector(ctx, it, leaf_ranges(0, n, target))
        cached = ctx.cache[key] = _contributions(rank, out_degree, n)
        ctx.charge(costs.vec_read * n)
    contrib, teleport = cached
    new = _finish_rows(matrix[b:e] @ contrib, n, teleport, args["delta"])
    nnz = int(matrix.indptr[e] - matrix.indptr[b])
    ctx.charge(costs.nnz * nnz + costs.row * (e - b))
    return {segment_name(it + 1, b, e): new.tobytes()}


def _spawn_spmv(ctx, args, b, e, job=None):
    it, target = args["it"], args["target"]
    child = dict(args, b=b, e=e)
    if e - b > target:
        return ctx.spawn_task("spmv", child, job=job)
    n = args["n"]
    inputs = [segment_name(it, lo, hi) for lo, hi in leaf_ranges(0, n, target)]
    return ctx.spawn_task("spmv", child, inputs=inputs, outputs=[segment_name(it + 1, b, e)], job=job)


def pagerank_task(ctx, args):
    """Open the job for the next iteration, gated on this one completing."""
    nxt = args["it"] + 1
    if nxt >= args["iters"]:
        return {}
    job = ctx.spawn_job()
    _spawn_spmv(ctx, dict(args, it=nxt), 0, args["n"], job=job)
    ctx.spawn_task("pagerank", dict(args, it=nxt), job=job)
    return {}


def install_pagerank(rt: Runtime) -> None:
    for name, fn in (("spmv", spmv_task), ("pagerank", pagerank_task)):
        if name not in rt.registry:
            rt.register_function(name, fn)


class _Seed:
    """Stand-in task context for spawning the first job from outside any task."""

    def __init__(self, rt: Runtime):
        self.runtime = rt
        self.key = "pagerank"
        self._children = 0

    def spawn_task(self, fn, args=None, inputs=(), outputs=(), job=None):
        self._children += 1
        return self.runtime.spawn_task(job, fn, args, inputs, outputs, key=f"{self.key}/{self._children}")


@dataclass
class PageRankResult:
    ranks: np.ndarray
    history: list
    stats: object


def pagerank_driver(rt: Runtime, csr: CsrMatrix, iters: int, target_rows: int,
                    delta: float = DAMPING, executor=None) -> PageRankResult:
    """Run ``iters`` PageRank iterations on ``rt`` and collect ``rank:0..iters``."""
    n = csr.n
    if n < 1:
        raise ValueError("graph has no vertices")
    if target_rows < 1:
        raise ValueError("target_rows must be positive")
    install_pagerank(rt)
    head = csr.to_pool(rt.pool)
    leaves = leaf_ranges(0, n, target_rows)
    uniform = np.full(n, 1.0 / n)
    for b, e in leaves:
        rt.publish(segment_name(0, b, e), uniform[b:e].tobytes())
    stats = None
    if iters > 0:
        args = {"it": 0, "iters": iters, "n": n, "target": target_rows, "csr": head, "delta": delta}
        seed = _Seed(rt)
        job = rt.spawn_job()
        _spawn_spmv(seed, dict(args, b=0, e=n), 0, n, job=job)
        seed.spawn_task("pagerank", args, job=job)
        stats = rt.run(executor)
    history = []
    for it in range(iters + 1):
        parts = [rt.names.get(segment_name(it, b, e)) for b, e in leaves]
        if any(p is None for p in parts):
            raise RuntimeError(f"rank:{it} incomplete after run")
        history.append(np.concatenate([np.frombuffer(p, dtype=np.float64) for p in parts]))
    return PageRankResult(history[-1].copy(), history, stats)
