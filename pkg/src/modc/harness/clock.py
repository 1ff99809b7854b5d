"""Scripted virtual-clock traces of the heartbeat failure detector.

Every worker beats and scans once per ``beat_period`` on the deterministic
executor.  Frozen workers simply stop at their freeze tick, which is all a
crash looks like from the outside.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..pool import Pool
from ..runtime import SimulatedExecutor
from ..structures import FailureDetector, HeartbeatTable

__all__ = ["DetectorTrace", "detector_trace", "random_freeze_schedule"]


@dataclass
class DetectorTrace:
    freezes: dict
    pronouncements: list = field(default_factory=list)   # (worker, by, time)
    attempts: list = field(default_factory=list)         # (worker, by, time, won)
    horizon: float = 0.0

    def latency(self, w: int) -> float | None:
        times = [t for d, _, t in self.pronouncements if d == w]
        return min(times) - self.freezes[w] if times and w in self.freezes else None

    def winners(self, w: int) -> list[int]:
        return [by for d, by, _ in self.pronouncements if d == w]


def detector_trace(workers: int, freezes: dict, beat_period: float = 1.0, timeout: float = 50.0,
                   horizon: float | None = None, seed: int = 0, phases=None) -> DetectorTrace:
    """Run beats and scans until ``horizon`` with workers frozen at given ticks.

    ``phases`` optionally offsets each worker's beat schedule within one
    period (default: all aligned at zero).
    """
    pool = Pool(1 << 20)
    hb = HeartbeatTable.create(pool, workers)
    for w in range(workers):
        hb.activate(w)
    if horizon is None:
        horizon = max(freezes.values(), default=0.0) + timeout + 10 * beat_period
    ex = SimulatedExecutor(seed=seed)
    trace = DetectorTrace(dict(freezes), horizon=horizon)

    def beater(w):
        det = FailureDetector(hb, w, timeout)
        stop = freezes.get(w)
        while True:
            now = ex.now()
            if stop is not None and now >= stop:
                return
            hb.beat(w)
            hb.advance_frontier()
            for suspect in det.scan(now):
                won = hb.pronounce_dead(suspect)
                trace.attempts.append((suspect, w, now, won))
                if won:
                    trace.pronouncements.append((suspect, w, now))
            yield beat_period

    def clock():
        while ex.now() < horizon:
            yield beat_period

    for w in range(workers):
        delay = phases[w] if phases else 0.0
        ex.spawn(f"hb{w}", beater(w), owner=w, timer=True, delay=delay)
    ex.spawn("clock", clock())
    ex.run()
    pool.close()
    return trace


def random_freeze_schedule(rng: random.Random, workers: int, frozen: int = 1, earliest: float = 5.0,
                           latest: float = 200.0, beat_period: float = 1.0) -> tuple[dict, list]:
    """Random freeze ticks for ``frozen`` distinct workers plus random beat phases."""
    victims = rng.sample(range(workers), frozen)
    freezes = {w: float(rng.randint(int(earliest), int(latest))) for w in victims}
    phases = [rng.random() * beat_period for _ in range(workers)]
    return freezes, phases
