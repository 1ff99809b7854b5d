"""Bulk-synchronous PageRank with checkpoint/restart, the baseline for recovery cost.

Rows are cut into sets of ``set_rows`` and dealt round robin to a fixed
number of logical ranks.  Every iteration each rank computes its sets into
a dense vector, then all ranks meet at a barrier.  Every ``ckpt_interval``
iterations the vector is copied into a double-buffered checkpoint and
committed with one CAS.

A crash stalls everyone at the next barrier.  Once the dead worker is
pronounced, the pronouncing worker hands its ranks to a spare and starts a
new generation that restarts from the last committed checkpoint; all
survivors abandon their current iteration and re-run from there.
"""

from __future__ import annotations

import math
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..pool import MASK64
from ..runtime import Runtime
from ..runtime.scheduler import Worker
from ..structures import Barrier, Outcome
from .csr import CsrMatrix
from .pagerank import DAMPING

__all__ = ["BspProgram", "BspWorker", "BspResult", "bsp_pagerank", "row_sets"]

_U64 = struct.Struct("<Q")

# program header
_CTRL = 0        # 128-bit: generation << 64 | restart iteration
_COMMIT = 16     # ckpt_iter << 1 | buffer index
_HEAD = 64

_MAX_GENS = 64


def row_sets(n: int, set_rows: int) -> list[tuple[int, int]]:
    return [(b, min(b + set_rows, n)) for b in range(0, n, set_rows)]


@dataclass
class BspResult:
    ranks: np.ndarray
    history: list
    stats: object
    checkpoint_time: float = 0.0
    replay_iterations: int = 0
    rollbacks: list = field(default_factory=list)
    iteration_times: dict = field(default_factory=dict)


class BspProgram:
    """Pool-resident state of one checkpointed BSP run."""

    def __init__(self, rt: Runtime, csr: CsrMatrix, iters: int, set_rows: int, ckpt_interval: int,
                 delta: float = DAMPING):
        if set_rows < 1 or ckpt_interval < 1:
            raise ValueError("set_rows and ckpt_interval must be positive")
        self.rt = rt
        pool = self.pool = rt.pool
        self.n = n = csr.n
        self.iters = iters
        self.ckpt_interval = ckpt_interval
        self.delta = delta
        self.ranks = rt.config.workers
        self.sets = row_sets(n, set_rows)
        self.csr_head = csr.to_pool(pool)
        self.addr = pool.alloc(_HEAD, 64)
        self.bufs = [pool.alloc(64 + 8 * n, 64) for _ in range(2)]
        self.gen_size = 8 * (self.ranks + 1)
        self.gens = pool.alloc(self.gen_size * _MAX_GENS, 64)
        owners = list(range(self.ranks))
        self._write_gen(0, owners)
        self._write_buffer(0, 0, np.full(n, 1.0 / n))
        pool.store64(self.addr + _COMMIT, 0)
        pool.store128(self.addr + _CTRL, 0 << 64 | 1)
        # instrumentation
        self.lock = threading.Lock()
        self.rollbacks: list = []
        self.completed: dict[int, int] = {}
        self.release_times: dict[tuple, float] = {}
        self.ckpt_cost: dict[int, float] = {}
        self.finished_gen: int | None = None
        rt.worker_class = BspWorker
        rt.after_replace = self.rollback
        rt.program = self

    # -- pool state ---------------------------------------------------------

    def control(self) -> tuple[int, int]:
        word = self.pool.load128(self.addr + _CTRL)
        return word >> 64, word & MASK64

    def commit(self) -> tuple[int, int]:
        word = self.pool.load64(self.addr + _COMMIT)
        return word >> 1, word & 1

    def _write_gen(self, gen: int, owners) -> None:
        if gen >= _MAX_GENS:
            raise RuntimeError("too many rollbacks")
        rec = self.gens + self.gen_size * gen
        mask = 0
        for r, w in enumerate(owners):
            self.pool.store64(rec + 8 + 8 * r, w)
            mask |= 1 << w
        self.pool.store64(rec, mask)

    def members(self, gen: int) -> list[int]:
        mask = self.pool.load64(self.gens + self.gen_size * gen)
        return [w for w in range(64) if mask >> w & 1]

    def owners(self, gen: int) -> list[int]:
        rec = self.gens + self.gen_size * gen
        return [self.pool.load64(rec + 8 + 8 * r) for r in range(self.ranks)]

    def _write_buffer(self, buf: int, it: int, values, rows=None) -> None:
        base = self.bufs[buf]
        if rows is None:
            self.pool.write(base + 64, np.ascontiguousarray(values, dtype=np.float64).tobytes())
        else:
            b, _ = rows
            self.pool.write(base + 64 + 8 * b, np.ascontiguousarray(values, dtype=np.float64).tobytes())
        self.pool.store64(base, it)

    def buffer(self, buf: int) -> tuple[int, np.ndarray]:
        base = self.bufs[buf]
        values = np.frombuffer(self.pool.read(base + 64, 8 * self.n), dtype=np.float64)
        return self.pool.load64(base), values

    def _shared_addr(self, name: str, make) -> int:
        names = self.rt.names
        won, _ = names.claim(name, 1)
        if won:
            addr = make()
            names.publish(name, _U64.pack(addr))
            return addr
        while (raw := names.get(name)) is None:
            time.sleep(0)
        return _U64.unpack(raw)[0]

    def vector_addr(self, gen: int, it: int) -> int:
        return self._shared_addr(f"bsp:vec:{gen}:{it}", lambda: self.pool.alloc(8 * self.n, 64))

    def vector(self, gen: int, it: int) -> np.ndarray:
        raw = self.pool.read(self.vector_addr(gen, it), 8 * self.n)
        return np.frombuffer(raw, dtype=np.float64)

    def barrier(self, gen: int, it: int, phase: str) -> Barrier:
        members = self.members(gen)
        addr = self._shared_addr(f"bsp:bar:{gen}:{it}:{phase}",
                                 lambda: Barrier.create(self.pool, members, log_capacity=4).addr)
        return Barrier(self.pool, addr)

    # -- recovery -------------------------------------------------------------

    def rollback(self, dead: int, spare: int | None) -> None:
        """Reassign ``dead``'s ranks and restart everyone from the last checkpoint."""
        rt, pool = self.rt, self.pool
        while True:
            gen, restart = self.control()
            if self.finished_gen is not None:
                return
            owners = self.owners(gen)
            if dead not in owners:
                return
            heir = spare
            if heir is None:
                alive = [w for w in self.members(gen) if w != dead and not rt.hb.is_dead(w)]
                if not alive:
                    raise RuntimeError("no surviving worker to take over")
                heir = alive[0]
            won, _ = rt.names.claim(f"bsp:gen:{gen + 1}", dead + 1)
            if not won:
                while self.control()[0] == gen:
                    time.sleep(0)
                continue
            self._write_gen(gen + 1, [heir if o == dead else o for o in owners])
            ckpt_iter, _ = self.commit()
            ok, _ = pool.cas128(self.addr + _CTRL, gen << 64 | restart, (gen + 1) << 64 | (ckpt_iter + 1))
            if not ok:
                raise RuntimeError("generation word moved under a claimed rollback")
            crash = rt.crash_record or {}
            with self.lock:
                self.rollbacks.append({"gen": gen + 1, "dead": dead, "heir": heir, "ckpt_iter": ckpt_iter,
                                       "restart": ckpt_iter + 1, "crash_iter": crash.get("iteration"),
                                       "time": rt.now()})
            return


class BspWorker(Worker):
    """One BSP rank holder; reuses the runtime's heartbeat duty and crash points."""

    def steps(self):
        prog: BspProgram = self.rt.program
        costs = self.costs
        while True:
            if prog.finished_gen is not None:
                return
            gen, restart = prog.control()
            owners = prog.owners(gen)
            mine = [r for r, w in enumerate(owners) if w == self.id]
            if not mine:
                # not (yet) part of this generation
                yield costs.poll_max
                self._fence()
                continue
            done = yield from self._run_generation(prog, gen, restart, mine)
            if done:
                return

    def _charge_ckpt(self, prog, ms: float):
        with prog.lock:
            prog.ckpt_cost[self.id] = prog.ckpt_cost.get(self.id, 0.0) + ms

    def _stale(self, prog, gen) -> bool:
        self._fence()
        return prog.control()[0] != gen

    def _run_generation(self, prog: BspProgram, gen: int, restart: int, mine: list[int]):
        costs, n = self.costs, prog.n
        my_sets = [s for i, s in enumerate(prog.sets) if i % prog.ranks in mine]
        my_rows = sum(e - b for b, e in my_sets)
        ckpt_iter, buf = prog.commit()
        tag, src = prog.buffer(buf)
        if tag != restart - 1:
            raise RuntimeError(f"checkpoint holds iteration {tag}, restart expects {restart - 1}")
        if gen > 0:
            read = costs.ckpt_read * n
            self._charge_ckpt(prog, read)
            yield read
        csr = self.cache.get("csr")
        if csr is None:
            csr = self.cache["csr"] = CsrMatrix.from_pool(self.pool, prog.csr_head)
            self.cache["A"] = csr.to_scipy()
        matrix = self.cache["A"]
        has_out = csr.out_degree > 0
        for it in range(restart, prog.iters + 1):
            if self._stale(prog, gen):
                return False
            self._point("idle", it - 1)
            self._point("pre_running_cas", it - 1)
            contrib = np.zeros(n, dtype=np.float64)
            contrib[has_out] = src[has_out] / csr.out_degree[has_out]
            teleport = math.fsum(src[~has_out].tolist()) / n
            parts, nnz = [], 0
            for b, e in my_sets:
                parts.append(((b, e), (1.0 - prog.delta) / n + prog.delta * (matrix[b:e] @ contrib + teleport)))
                nnz += int(matrix.indptr[e] - matrix.indptr[b])
            yield (costs.vec_read * n + costs.nnz * nnz + costs.row * my_rows + costs.task * len(my_sets))
            self._point("mid_task", it - 1)
            if self._stale(prog, gen):
                return False
            dst = prog.vector_addr(gen, it)
            for (b, e), values in parts:
                self.pool.write(dst + 8 * b, values.tobytes())
            yield costs.dep * len(my_sets)
            self._point("post_publish_pre_done", it - 1)
            released = yield from self._sync(prog, gen, it, "step")
            if not released:
                return False
            with prog.lock:
                prog.completed[it] = max(gen, prog.completed.get(it, gen))
            src = prog.vector(gen, it)
            if it % prog.ckpt_interval == 0 and it < prog.iters:
                if self._stale(prog, gen):
                    return False
                ckpt_iter, buf = prog.commit()
                target = 1 - buf if ckpt_iter < it else buf
                for b, e in my_sets:
                    prog._write_buffer(target, it, src[b:e], rows=(b, e))
                write = costs.ckpt_write * my_rows
                self._charge_ckpt(prog, write)
                yield write
                released = yield from self._sync(prog, gen, it, "ckpt")
                if not released:
                    return False
                old = ckpt_iter << 1 | buf
                if ckpt_iter < it:
                    self.pool.cas64(prog.addr + _COMMIT, old, it << 1 | target)
        with prog.lock:
            if prog.finished_gen is None:
                prog.finished_gen = gen
        return True

    def _sync(self, prog: BspProgram, gen: int, it: int, phase: str):
        barrier = prog.barrier(gen, it, phase)
        outcome, token = yield from self._atomic(barrier.arrive_steps(self.id))
        if outcome is Outcome.RELEASED:
            self._released(prog, gen, it, phase)
            return True
        if phase == "step":
            self._point("in_barrier_wait", it - 1)
        pause = self.costs.poll
        while True:
            outcome = barrier.poll(token)
            if outcome is Outcome.RELEASED:
                self._released(prog, gen, it, phase)
                return True
            if self._stale(prog, gen):
                return False
            yield pause
            pause = min(2 * pause, self.costs.poll_max)

    def _released(self, prog, gen, it, phase):
        if phase != "step":
            return
        now = self.rt.now()
        with prog.lock:
            key = (gen, it)
            if key not in prog.release_times or now < prog.release_times[key]:
                prog.release_times[key] = now


def bsp_pagerank(rt: Runtime, csr: CsrMatrix, iters: int, set_rows: int, ckpt_interval: int,
                 delta: float = DAMPING, executor=None) -> BspResult:
    """Run checkpointed BSP PageRank on ``rt`` (crash injection via ``rt.crash``)."""
    if csr.n < 1:
        raise ValueError("graph has no vertices")
    prog = BspProgram(rt, csr, iters, set_rows, ckpt_interval, delta)
    initial = np.full(csr.n, 1.0 / csr.n)
    stats = None
    if iters > 0:
        stats = rt.run(executor)
    history = [initial]
    for it in range(1, iters + 1):
        gen = prog.completed.get(it)
        if gen is None:
            raise RuntimeError(f"iteration {it} never completed")
        history.append(prog.vector(gen, it).copy())
    times = {}
    for it in range(1, iters + 1):
        gen = prog.completed[it]
        times[it] = prog.release_times.get((gen, it))
    replay = 0
    if prog.rollbacks:
        rb = prog.rollbacks[0]
        if rb["crash_iter"] is not None:
            replay = rb["crash_iter"] - rb["ckpt_iter"]
    return BspResult(
        ranks=history[-1].copy(),
        history=history,
        stats=stats,
        checkpoint_time=max(prog.ckpt_cost.values(), default=0.0),
        replay_iterations=replay,
        rollbacks=list(prog.rollbacks),
        iteration_times=times,
    )
