"""Decentralized task scheduler: workers, dispatch, stealing and recovery.

Every piece of state another worker could need after a crash (queues,
running slots, task and job records, barriers, heartbeats, named data)
lives in the pool.  A :class:`Worker` object holds only caches and its
own failure-detector observations, all of which may be lost at any time.
"""

from __future__ import annotations

import random
import struct
import threading
import time
from dataclasses import dataclass, field

from ..namestore import NameStore, Registration
from ..pool import DEFAULT_CAPACITY, Pool
from ..structures import (
    AlreadyMember, Barrier, FailureDetector, HeartbeatTable, NotOwner, Outcome, RETRY, WorkQueue,
)
from ..structures.deque import DEFAULT_QUEUE_CAPACITY
from ..structures.heartbeat import DEAD
from .costs import CostModel
from .descriptors import (
    J_BARRIER, J_PRED, J_STATE, J_TASKS, JOB_COMPLETE, JOB_OPEN, JOB_SIZE, JOB_UNUSED, NO_SPARE,
    ROLE_ACTIVE, ROLE_SPARE, T_JOB, T_STATUS, W_QUEUE, W_REPLACED, W_ROLE, W_SLOT, WORKER_SIZE,
    CrashSpec, FunctionRegistry, Status, TaskDescriptor, TaskFault, UnknownFunction, UnknownJob,
    fn_id_of, split_status, status_word,
)
from .executor import SimulatedExecutor, WorkerCrashed, WorkerHalted

__all__ = ["Runtime", "RuntimeConfig", "Worker", "TaskContext", "RunStats", "NoSpare", "done_name"]

_I64 = struct.Struct("<q")

# runtime header
H_JOBS = 0
H_EXECUTED = 8
H_REEXECUTED = 16
H_STEALS_OK = 24
H_STEALS_FAILED = 32
H_SPAWNED = 40
H_JOB_TABLE = 48
H_WORKER_TABLE = 56
H_SIZE = 64

_CLAIMING = 1 << 63


class NoSpare(Exception):
    pass


def done_name(job: int) -> str:
    return f"job:{job}:done"


@dataclass
class RuntimeConfig:
    workers: int = 8
    spares: int = 0
    beat_period: float = 1.0
    suspicion_timeout: float = 50.0
    quorum: object = None
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    name_capacity: int = 1 << 16
    job_capacity: int = 4096
    pool_capacity: int = DEFAULT_CAPACITY
    seed: int = 0
    strict_publish: bool = False
    costs: CostModel = field(default_factory=CostModel)


@dataclass
class RunStats:
    total_time: float = 0.0
    tasks_executed: int = 0
    tasks_reexecuted: int = 0
    tasks_spawned: int = 0
    steals_ok: int = 0
    steals_failed: int = 0
    job_release_times: dict = field(default_factory=dict)
    crash: dict | None = None
    pronouncements: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    concurrent_runs: int = 0


class Runtime:
    """Shared runtime state for one application run.

    The first ``workers`` ids are active; the following ``spares`` ids are
    hot standbys that take over (one per failure) after a worker is
    pronounced dead.
    """

    def __init__(self, workers: int = 8, spares: int = 0, pool: Pool | None = None, **options):
        self.config = cfg = RuntimeConfig(workers=workers, spares=spares, **options)
        if workers < 1:
            raise ValueError("need at least one worker")
        self.n = n = workers + spares
        self.pool = pool = pool or Pool(cfg.pool_capacity)
        self.costs = cfg.costs
        self.seed = cfg.seed
        self.header = pool.alloc(H_SIZE, 16)
        self.hb = HeartbeatTable.create(pool, n, quorum=cfg.quorum)
        self.names = NameStore.create(pool, cfg.name_capacity, strict=cfg.strict_publish)
        self.jobs_addr = pool.alloc(JOB_SIZE * cfg.job_capacity, 64)
        self.workers_addr = pool.alloc(WORKER_SIZE * n, 64)
        pool.store64(self.header + H_JOB_TABLE, self.jobs_addr)
        pool.store64(self.header + H_WORKER_TABLE, self.workers_addr)
        self.queues = []
        for w in range(n):
            q = WorkQueue.create(pool, w, cfg.queue_capacity)
            self.queues.append(q)
            rec = self._wrec(w)
            pool.store64(rec + W_QUEUE, q.addr)
            pool.store64(rec + W_ROLE, ROLE_ACTIVE if w < workers else ROLE_SPARE)
            if w < workers:
                self.hb.activate(w)
        self.registry = FunctionRegistry()
        self.worker_class = Worker
        self.crash: CrashSpec | None = None
        self.executor = None
        # instrumentation only; nothing below is consulted for recovery
        self.crash_record: dict | None = None
        self.pronouncements: list = []
        self.activations: list = []
        self.release_times: dict = {}
        self._running: dict[int, set] = {}
        self._crashed: set = set()
        self.concurrent_runs = 0
        self._ilock = threading.Lock()

    # -- records ----------------------------------------------------------

    def _wrec(self, w: int) -> int:
        return self.workers_addr + WORKER_SIZE * w

    def _jrec(self, j: int) -> int:
        return self.jobs_addr + JOB_SIZE * j

    def slot_addr(self, w: int) -> int:
        return self._wrec(w) + W_SLOT

    def role(self, w: int) -> int:
        return self.pool.load64(self._wrec(w) + W_ROLE)

    def active_workers(self) -> list[int]:
        return [w for w in range(self.n)
                if self.role(w) == ROLE_ACTIVE and self.hb.status(w) != DEAD]

    @property
    def job_count(self) -> int:
        return self.pool.load64(self.header + H_JOBS)

    def job_state(self, j: int) -> int:
        if j >= self.job_count:
            return JOB_UNUSED
        return self.pool.load64(self._jrec(j) + J_STATE)

    def job_predecessor(self, j: int):
        p = self.pool.load64(self._jrec(j) + J_PRED)
        return None if p == 0 else p - 1

    def job_barrier(self, j: int) -> Barrier:
        return Barrier(self.pool, self.pool.load64(self._jrec(j) + J_BARRIER))

    def task_status(self, ref: int) -> tuple[Status, int]:
        return split_status(self.pool.load64(ref + T_STATUS))

    def describe(self, ref: int) -> TaskDescriptor:
        return TaskDescriptor.read(self.pool, ref)

    def counter(self, offset: int) -> int:
        return self.pool.load64(self.header + offset)

    def now(self) -> float:
        return self.executor.now() if self.executor is not None else 0.0

    # -- program construction ----------------------------------------------

    def register_function(self, name, fn) -> int:
        return self.registry.register(name, fn)

    def _await_int(self, name) -> int:
        while (raw := self.names.get(name)) is None:
            time.sleep(0)
        return _I64.unpack(raw)[0]

    def spawn_job(self, predecessor: int | None = None, key: str | None = None) -> int:
        """Open a new job, gated on ``predecessor`` completing."""
        pool = self.pool
        dedup = None
        if key is not None:
            dedup = f"jobkey:{key}"
            won, _ = self.names.claim(dedup, 1)
            if not won:
                return self._await_int(dedup)
        if predecessor is not None and self.job_state(predecessor) == JOB_UNUSED:
            raise UnknownJob(f"predecessor job {predecessor} does not exist")
        jid = pool.faa64(self.header + H_JOBS, 1)
        if jid >= self.config.job_capacity:
            raise UnknownJob(f"job table full ({self.config.job_capacity})")
        barrier = Barrier.create(pool, self.active_workers(), log_capacity=4 * self.n + 8)
        rec = self._jrec(jid)
        pool.store64(rec + J_PRED, 0 if predecessor is None else predecessor + 1)
        pool.store64(rec + J_BARRIER, barrier.addr)
        pool.store64(rec + J_STATE, JOB_OPEN)
        if dedup is not None:
            self.names.publish(dedup, _I64.pack(jid))
        return jid

    def spawn_task(self, job: int, fn, args=None, inputs=(), outputs=(), key: str | None = None,
                   worker: int = 0) -> int:
        """Create a task in ``job``; READY tasks go onto ``worker``'s queue.

        With a ``key``, spawning is idempotent: a re-executed parent that
        spawns the same child again gets the existing task id back.
        """
        pool = self.pool
        state = self.job_state(job)
        if state == JOB_UNUSED:
            raise UnknownJob(f"job {job} does not exist")
        if state != JOB_OPEN:
            raise UnknownJob(f"job {job} is already complete")
        dedup = None
        if key is not None:
            dedup = f"task:{job}:{key}"
            won, _ = self.names.claim(dedup, 1)
            if not won:
                return self._await_int(dedup)
        tid = pool.faa64(self._jrec(job) + J_TASKS, 1)
        if key is None:
            key = f"{job}.{tid}"
        inputs, outputs = list(inputs), list(outputs)
        ref = TaskDescriptor.write(pool, job, tid, fn_id_of(fn), args, inputs, outputs, key)
        for name in outputs:
            self.names.declare(name)
        if dedup is not None:
            self.names.publish(dedup, _I64.pack(tid))
        gate = list(inputs)
        pred = self.job_predecessor(job)
        if pred is not None:
            gate.append(done_name(pred))
        pool.store64(ref + T_STATUS, status_word(Status.WAITING, 0))
        pool.faa64(self.header + H_SPAWNED, 1)
        if self.names.register_waiter(ref, gate) is Registration.READY_NOW:
            self.make_ready(ref, worker)
        return tid

    def make_ready(self, ref: int, worker: int) -> bool:
        ok, _ = self.pool.cas64(ref + T_STATUS, status_word(Status.WAITING, 0), status_word(Status.READY, 0))
        if ok:
            self.queues[worker].push(worker, ref)
        return ok

    def publish(self, name, payload, worker: int = 0) -> None:
        """Publish from outside any task (initial inputs)."""
        for ref in self.names.publish(name, payload):
            self.make_ready(ref, worker)

    # -- failure handling -------------------------------------------------

    def on_pronounced(self, dead: int, by: int, at: float):
        with self._ilock:
            self.pronouncements.append({"worker": dead, "by": by, "time": at})
        self.replace(dead)

    def replace(self, dead: int):
        """Activate one hot spare for ``dead``; idempotent per dead worker."""
        pool = self.pool
        rec = self._wrec(dead) + W_REPLACED
        won, _ = pool.cas64(rec, 0, _CLAIMING)
        if not won:
            return
        for s in range(self.n):
            if self.role(s) != ROLE_SPARE:
                continue
            ok, _ = pool.cas64(self._wrec(s) + W_ROLE, ROLE_SPARE, ROLE_ACTIVE)
            if not ok:
                continue
            self.hb.activate(s)
            for j in range(self.job_count):
                if self.job_state(j) != JOB_OPEN:
                    continue
                b = self.job_barrier(j)
                if b.release_seq == 0 and not b.is_member(s):
                    try:
                        b.join(s)
                    except AlreadyMember:
                        pass
            pool.store64(rec, s + 1)
            with self._ilock:
                self.activations.append({"spare": s, "for": dead, "time": self.now()})
            self.after_replace(dead, s)
            if self.executor is not None:
                self._start(s, delay=self.costs.spare_start)
            return s
        pool.store64(rec, NO_SPARE)
        self.after_replace(dead, None)
        return None

    def after_replace(self, dead: int, spare: int | None) -> None:
        """Hook for programs with their own recovery protocol (e.g. rollback)."""

    def activate_spare(self) -> int:
        """Activate any spare directly (outside of failure handling)."""
        for s in range(self.n):
            ok, _ = self.pool.cas64(self._wrec(s) + W_ROLE, ROLE_SPARE, ROLE_ACTIVE)
            if ok:
                self.hb.activate(s)
                if self.executor is not None:
                    self._start(s, delay=self.costs.spare_start)
                return s
        raise NoSpare("no hot spare left")

    def recovery_pending(self, d: int, barrier: Barrier | None = None) -> bool:
        pool = self.pool
        if pool.load64(self.slot_addr(d)):
            return True
        if pool.load64(self._wrec(d) + W_REPLACED) == 0:
            return True
        if barrier is not None and barrier.release_seq == 0 and barrier.is_member(d):
            return True
        return any(q.owner == d for q in self.queues)

    def _on_crash(self, w: int, at: float):
        with self._ilock:
            self._crashed.add(w)
            for holders in self._running.values():
                holders.discard(w)
            if self.crash_record is not None and self.crash_record["worker"] == w:
                self.crash_record["time"] = at

    def _on_halt(self, w: int, at: float):
        self._on_crash(w, at)

    # -- debug instrumentation ----------------------------------------------

    def _enter_running(self, ref: int, w: int):
        with self._ilock:
            holders = self._running.setdefault(ref, set())
            if holders - self._crashed:
                self.concurrent_runs += 1
            holders.add(w)

    def _leave_running(self, ref: int, w: int):
        with self._ilock:
            self._running.get(ref, set()).discard(w)

    # -- running ----------------------------------------------------------

    def _start(self, w: int, delay: float = 0.0):
        worker = self.worker_class(self, w)
        self.executor.spawn(f"worker{w}", worker.steps(), owner=w, delay=delay)
        self.executor.spawn(f"heartbeat{w}", worker.heartbeat_steps(), owner=w, timer=True, delay=delay)

    def run(self, executor=None) -> RunStats:
        ex = executor or SimulatedExecutor(seed=self.seed)
        self.executor = ex
        ex.on_crash = self._on_crash
        ex.on_halt = self._on_halt
        for w in range(self.n):
            if self.role(w) == ROLE_ACTIVE and self.hb.is_alive(w):
                self._start(w)
        end = ex.run()
        return self.stats(end)

    def stats(self, total_time: float = 0.0) -> RunStats:
        return RunStats(
            total_time=total_time,
            tasks_executed=self.counter(H_EXECUTED),
            tasks_reexecuted=self.counter(H_REEXECUTED),
            tasks_spawned=self.counter(H_SPAWNED),
            steals_ok=self.counter(H_STEALS_OK),
            steals_failed=self.counter(H_STEALS_FAILED),
            job_release_times=dict(self.release_times),
            crash=dict(self.crash_record) if self.crash_record else None,
            pronouncements=list(self.pronouncements),
            activations=list(self.activations),
            concurrent_runs=self.concurrent_runs,
        )


class TaskContext:
    """What a running task function sees: its inputs, spawning, and a cost meter."""

    def __init__(self, worker: "Worker", desc: TaskDescriptor):
        self.worker = worker
        self.runtime = worker.rt
        self.job_id = desc.job_id
        self.task_id = desc.task_id
        self.key = desc.key
        self.inputs = desc.inputs
        self.outputs = desc.outputs
        self.cache = worker.cache
        self.cost = 0.0
        self._children = 0

    @property
    def worker_id(self) -> int:
        return self.worker.id

    def get(self, name) -> bytes | None:
        return self.runtime.names.get(name)

    def charge(self, ms: float) -> None:
        self.cost += ms

    def spawn_task(self, fn, args=None, inputs=(), outputs=(), job: int | None = None) -> int:
        self._children += 1
        key = f"{self.key}/{self._children}"
        self.cost += self.runtime.costs.spawn + self.runtime.costs.dep * len(inputs)
        return self.runtime.spawn_task(self.job_id if job is None else job, fn, args, inputs,
                                       outputs, key=key, worker=self.worker.id)

    def spawn_job(self, predecessor: int | None = -1) -> int:
        self._children += 1
        if predecessor == -1:
            predecessor = self.job_id
        return self.runtime.spawn_job(predecessor, key=f"{self.key}/job{self._children}")


class Worker:
    """One worker's execution contexts: the scheduling loop and its heartbeat."""

    def __init__(self, rt: Runtime, wid: int):
        self.rt = rt
        self.id = wid
        self.pool = rt.pool
        self.queue = rt.queues[wid]
        self.adopted: list[WorkQueue] = []
        self.rng = random.Random(rt.seed * 1_000_003 + wid)
        self.cache: dict = {}
        self.costs = rt.costs
        self.job = None

    def __repr__(self):
        return f"<Worker {self.id} job={self.job}>"

    # -- crash injection and fencing --------------------------------------

    def _point(self, name: str, job: int):
        spec = self.rt.crash
        if spec is None or self.rt.crash_record is not None:
            return
        if spec.worker == self.id and spec.point == name and job + 1 >= spec.iteration:
            queued = len(self.queue) + sum(len(q) for q in self.adopted)
            self.rt.crash_record = {"worker": self.id, "point": name, "iteration": job + 1,
                                    "queued": queued, "time": self.rt.now()}
            raise WorkerCrashed(f"worker {self.id} crashed at {name} in iteration {job + 1}")

    def _fence(self):
        if self.rt.hb.status(self.id) == DEAD:
            raise WorkerHalted(f"worker {self.id} was pronounced dead")

    def _atomic(self, gen):
        """Run a step-wise structure operation, charging one step per yield."""
        step = self.costs.step
        try:
            while True:
                next(gen)
                yield step
        except StopIteration as stop:
            return stop.value

    # -- the scheduling loop ---------------------------------------------

    def steps(self):
        rt = self.rt
        job = next((j for j in range(rt.job_count) if rt.job_state(j) == JOB_OPEN), None)
        while job is not None:
            yield from self._run_job(job)
            job = self._next_job(job)

    def _next_job(self, job: int):
        rt = self.rt
        nxt = job + 1
        if nxt >= rt.job_count:
            return None
        while rt.pool.load64(rt._jrec(nxt) + J_STATE) == JOB_UNUSED:
            time.sleep(0)
        return nxt

    def _run_job(self, job: int):
        rt = self.rt
        self.job = job
        barrier = rt.job_barrier(job)
        if barrier.release_seq:
            self._finish_job(job)
            return
        if not barrier.is_member(self.id):
            try:
                yield from self._atomic(barrier.join_steps(self.id))
            except AlreadyMember:
                pass
        costs = self.costs
        while True:
            self._fence()
            ref = self._pop_any()
            if ref:
                yield from self._execute(ref)
                continue
            ref, retried, tried = self._steal_round()
            yield costs.step * max(tried, 1)
            if ref:
                yield from self._execute(ref)
                continue
            if self._recover_any(barrier):
                yield costs.step * 4
                continue
            if retried:
                continue
            self._point("idle", job)
            outcome, token = yield from self._atomic(barrier.arrive_steps(self.id))
            if outcome is Outcome.RELEASED:
                self._finish_job(job)
                return
            if token[1] > 0:
                # job barriers are single use: a late joiner arrived after the release
                barrier.cancel(token)
                self._finish_job(job)
                return
            self._point("in_barrier_wait", job)
            pause = costs.poll
            while True:
                outcome = barrier.poll(token)
                if outcome is None and (self._work_visible() or self._dead_to_recover(barrier)):
                    outcome = barrier.cancel(token)
                if outcome is not None:
                    break
                yield pause
                pause = min(2 * pause, costs.poll_max)
            if outcome is Outcome.RELEASED:
                self._finish_job(job)
                return

    def _finish_job(self, job: int):
        rt = self.rt
        with rt._ilock:
            now = rt.now()
            if job not in rt.release_times or now < rt.release_times[job]:
                rt.release_times[job] = now
        self._promote(rt.names.publish(done_name(job), b""))
        rt.pool.cas64(rt._jrec(job) + J_STATE, JOB_OPEN, JOB_COMPLETE)

    def _promote(self, refs):
        for ref in refs:
            self.rt.make_ready(ref, self.id)

    def _pop_any(self) -> int:
        ref = self.queue.pop(self.id)
        if ref:
            return ref
        for q in list(self.adopted):
            try:
                ref = q.pop(self.id)
            except NotOwner:
                self.adopted.remove(q)
                continue
            if ref:
                return ref
        return 0

    def _steal_round(self):
        rt = self.rt
        victims = [q for q in rt.queues if q is not self.queue and q not in self.adopted]
        self.rng.shuffle(victims)
        retried = False
        for i, q in enumerate(victims):
            got = q.steal(self.id)
            if got is RETRY:
                rt.pool.faa64(rt.header + H_STEALS_FAILED, 1)
                retried = True
            elif got:
                rt.pool.faa64(rt.header + H_STEALS_OK, 1)
                return got, retried, i + 1
        return 0, retried, len(victims)

    def _work_visible(self) -> bool:
        return any(q.nonempty() for q in self.rt.queues)

    def _dead_to_recover(self, barrier) -> bool:
        return any(self.rt.recovery_pending(d, barrier) for d in self.rt.hb.dead())

    # -- task execution ---------------------------------------------------

    def _execute(self, ref: int):
        rt, pool, costs = self.rt, self.pool, self.costs
        word = pool.load64(ref + T_STATUS)
        status, epoch = split_status(word)
        if status is not Status.READY:
            yield costs.step
            return
        slot = rt.slot_addr(self.id)
        pool.store64(slot, ref)
        job = pool.load64(ref + T_JOB)
        self._point("pre_running_cas", job)
        running = status_word(Status.RUNNING, epoch + 1)
        won, _ = pool.cas64(ref + T_STATUS, word, running)
        if not won:
            pool.store64(slot, 0)
            yield costs.step
            return
        pool.faa64(rt.header + H_EXECUTED, 1)
        if epoch:
            pool.faa64(rt.header + H_REEXECUTED, 1)
        rt._enter_running(ref, self.id)
        desc = TaskDescriptor.read(pool, ref)
        try:
            fn = rt.registry.lookup(desc.fn_id)
        except UnknownFunction:
            pool.store64(ref + T_STATUS, status_word(Status.FAILED, epoch + 1))
            raise
        ctx = TaskContext(self, desc)
        try:
            produced = fn(ctx, desc.args) or {}
        except Exception as exc:
            pool.store64(ref + T_STATUS, status_word(Status.FAILED, epoch + 1))
            raise TaskFault(f"task {desc.key} ({rt.registry.name(desc.fn_id)}) failed: {exc!r}") from exc
        missing = [o for o in desc.outputs if o not in produced]
        if missing or len(produced) != len(desc.outputs):
            pool.store64(ref + T_STATUS, status_word(Status.FAILED, epoch + 1))
            raise TaskFault(f"task {desc.key} produced {sorted(produced)} but declared {desc.outputs}")
        yield costs.task + ctx.cost + costs.dep * len(desc.inputs)
        self._point("mid_task", job)
        self._fence()
        for name in desc.outputs:
            self._promote(rt.names.publish(name, produced[name]))
        if desc.outputs:
            yield costs.dep * len(desc.outputs)
        self._point("post_publish_pre_done", job)
        self._fence()
        pool.cas64(ref + T_STATUS, running, status_word(Status.DONE, epoch + 1))
        pool.store64(slot, 0)
        rt._leave_running(ref, self.id)

    # -- recovery ---------------------------------------------------------

    def _recover_any(self, barrier) -> bool:
        did = False
        for d in self.rt.hb.dead():
            if self.rt.recovery_pending(d, barrier):
                did = self.recover(d) or did
        return did

    def recover(self, dead: int) -> bool:
        """Take over what ``dead`` left behind; every step is CAS-guarded."""
        rt, pool = self.rt, self.pool
        did = False
        for j in range(self.job if self.job is not None else 0, rt.job_count):
            if rt.job_state(j) != JOB_OPEN:
                continue
            b = rt.job_barrier(j)
            if b.release_seq == 0 and b.remove(dead, self.id):
                did = True
        for q in rt.queues:
            if q.owner == dead and q.take_ownership(self.id, dead, rt.hb):
                self.adopted.append(q)
                did = True
        slot = rt.slot_addr(dead)
        ref = pool.load64(slot)
        if ref:
            won, _ = pool.cas64(slot, ref, 0)
            if won:
                did = True
                word = pool.load64(ref + T_STATUS)
                status, epoch = split_status(word)
                if status is Status.RUNNING:
                    ok, _ = pool.cas64(ref + T_STATUS, word, status_word(Status.READY, epoch))
                    if ok:
                        self.queue.push(self.id, ref)
                elif status is Status.READY:
                    self.queue.push(self.id, ref)
        if pool.load64(rt._wrec(dead) + W_REPLACED) == 0:
            rt.replace(dead)
            did = True
        return did

    # -- heartbeat duty -----------------------------------------------------

    def heartbeat_steps(self):
        rt = self.rt
        hb = rt.hb
        detector = FailureDetector(hb, self.id, rt.config.suspicion_timeout)
        period = rt.config.beat_period
        while True:
            hb.beat(self.id)
            hb.advance_frontier()
            now = rt.now()
            for suspect in detector.scan(now):
                if hb.pronounce_dead(suspect):
                    rt.on_pronounced(suspect, self.id, now)
            yield period
