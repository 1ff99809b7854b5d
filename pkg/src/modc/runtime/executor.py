"""Drivers for worker step generators.

Workers and their heartbeat duties are written as generators that yield
the virtual cost (milliseconds) of the work they just did.  Two drivers run
them:

``SimulatedExecutor``
    Deterministic discrete-event driver.  Each entity has its own virtual
    clock; the entity with the smallest clock always steps next (ties
    broken by a seeded RNG), so every shared-memory effect is observed in
    virtual-time order and a seeded run is exactly reproducible.

``ThreadedExecutor``
    One OS thread per entity and wall-clock time.  Gives real preemptive
    interleavings for stress tests; costs are ignored except for timer
    entities, which sleep for the yielded duration.
"""

from __future__ import annotations

import heapq
import itertools
import random
import threading
import time

__all__ = [
    "WorkerCrashed",
    "WorkerHalted",
    "RuntimeStalled",
    "SimulatedExecutor",
    "ThreadedExecutor",
]


class WorkerCrashed(Exception):
    """Raised inside a worker at an injected crash point."""


class WorkerHalted(Exception):
    """A worker noticed it was pronounced dead and stopped itself."""


class RuntimeStalled(RuntimeError):
    pass


class _Entity:
    __slots__ = ("name", "gen", "owner", "timer", "alive", "time", "thread")

    def __init__(self, name, gen, owner, timer):
        self.name = name
        self.gen = gen
        self.owner = owner
        self.timer = timer
        self.alive = True
        self.time = 0.0
        self.thread = None


class _Base:
    def __init__(self):
        self.on_crash = None
        self.on_halt = None
        self.error: BaseException | None = None
        self._entities: list[_Entity] = []

    def _fail(self, ent: _Entity, exc: BaseException):
        if isinstance(exc, WorkerCrashed):
            self.kill(ent.owner)
            if self.on_crash is not None:
                self.on_crash(ent.owner, self.now())
        elif isinstance(exc, WorkerHalted):
            self.kill(ent.owner)
            if self.on_halt is not None:
                self.on_halt(ent.owner, self.now())
        else:
            self.error = self.error or exc
            self.abort()

    def kill(self, owner):
        for ent in self._entities:
            if ent.owner == owner:
                ent.alive = False


class SimulatedExecutor(_Base):
    """Single-threaded virtual-time scheduler.

    Parameters
    ----------
    seed : int
        Seeds tie-breaking between entities with equal clocks.
    max_time : float
        Virtual-time guard; exceeding it raises :class:`RuntimeStalled`.
    max_steps : int
        Step-count guard with the same purpose.
    """

    deterministic = True

    def __init__(self, seed: int = 0, max_time: float = 1e9, max_steps: int = 50_000_000):
        super().__init__()
        self._rng = random.Random(seed)
        self._heap = []
        self._seq = itertools.count()
        self._now = 0.0
        self._stopped = False
        self.max_time = max_time
        self.max_steps = max_steps
        self.steps = 0
        self.end_time = 0.0

    def now(self) -> float:
        return self._now

    def spawn(self, name, gen, owner=None, timer=False, delay=0.0):
        ent = _Entity(name, gen, owner, timer)
        ent.time = self._now + delay
        self._entities.append(ent)
        heapq.heappush(self._heap, (ent.time, self._rng.random(), next(self._seq), ent))
        return ent

    def abort(self):
        self._stopped = True

    def _busy(self):
        return any(e.alive and not e.timer for e in self._entities)

    def run(self):
        heap = self._heap
        while heap and not self._stopped:
            t, _, _, ent = heapq.heappop(heap)
            if not ent.alive:
                continue
            if ent.timer and not self._busy():
                ent.alive = False
                continue
            self._now = t
            self.steps += 1
            if t > self.max_time or self.steps > self.max_steps:
                raise RuntimeStalled(f"no completion by t={t:.3f} after {self.steps} steps")
            try:
                cost = next(ent.gen)
            except StopIteration:
                ent.alive = False
                if not ent.timer:
                    self.end_time = max(self.end_time, t)
                continue
            except BaseException as exc:  # noqa: BLE001 - routed by type
                ent.alive = False
                self._fail(ent, exc)
                continue
            ent.time = t + (cost or 0.0)
            heapq.heappush(heap, (ent.time, self._rng.random(), next(self._seq), ent))
        if self.error is not None:
            raise self.error
        return self.end_time


class ThreadedExecutor(_Base):
    """Runs each entity on its own thread against the wall clock.

    ``time_scale`` maps one virtual millisecond onto that many real
    milliseconds for timer entities and for :meth:`now`.
    """

    deterministic = False

    def __init__(self, time_scale: float = 1.0, timeout: float = 600.0):
        super().__init__()
        self.time_scale = time_scale
        self.timeout = timeout
        self._t0 = time.perf_counter()
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._started = False
        self.end_time = 0.0

    def now(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0 / self.time_scale

    def abort(self):
        self._stop.set()

    def spawn(self, name, gen, owner=None, timer=False, delay=0.0):
        ent = _Entity(name, gen, owner, timer)
        with self._lock:
            self._entities.append(ent)
        ent.thread = threading.Thread(target=self._drive, args=(ent, delay), name=name, daemon=True)
        if self._started:
            ent.thread.start()
        return ent

    def _busy(self):
        return any(e.alive and not e.timer for e in list(self._entities))

    def _drive(self, ent: _Entity, delay: float):
        if delay:
            time.sleep(delay * self.time_scale / 1000.0)
        try:
            while ent.alive and not self._stop.is_set():
                if ent.timer and not self._busy():
                    break
                cost = next(ent.gen)
                if ent.timer:
                    time.sleep((cost or 0.0) * self.time_scale / 1000.0)
                else:
                    time.sleep(0)
        except StopIteration:
            if not ent.timer:
                with self._lock:
                    self.end_time = max(self.end_time, self.now())
        except BaseException as exc:  # noqa: BLE001 - routed by type
            self._fail(ent, exc)
        finally:
            ent.alive = False

    def run(self):
        self._t0 = time.perf_counter()
        self._started = True
        for ent in list(self._entities):
            ent.thread.start()
        deadline = time.monotonic() + self.timeout
        while True:
            with self._lock:
                threads = [e.thread for e in self._entities]
            pending = [t for t in threads if t.is_alive()]
            if not pending:
                break
            if time.monotonic() > deadline:
                self.abort()
                raise RuntimeStalled("threaded run exceeded its timeout")
            pending[0].join(0.05)
        if self.error is not None:
            raise self.error
        return self.end_time
