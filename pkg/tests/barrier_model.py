"""Exhaustive small-interleaving explorer for barrier operations (test helper)."""

from __future__ import annotations

from modc.pool import Pool
from modc.structures import Barrier, Outcome
from modc.structures.barrier import unpack

BLOCKED = "blocked"


def waiter(b: Barrier, w: int, log: list):
    """A member that arrives, spins, and re-arrives after membership changes."""
    while True:
        outcome, token = yield from b.arrive_steps(w)
        if outcome is Outcome.RELEASED:
            replaced, active = token
            log.append(("release", w, replaced, active, b.mask_at(unpack(replaced)[0])))
            return
        log.append(("wait", w, token))
        while (seen := b.poll(token)) is None:
            yield BLOCKED
        log.append((seen.value, w, token))
        if seen is Outcome.RELEASED:
            return


def single_use_waiter(b: Barrier, w: int, log: list):
    """Like :func:`waiter`, but an arrival after the one release counts as released."""
    while True:
        outcome, token = yield from b.arrive_steps(w)
        if outcome is Outcome.RELEASED:
            replaced, active = token
            log.append(("release", w, replaced, active, b.mask_at(unpack(replaced)[0])))
            return
        if token[1] > 0:
            b.cancel(token)
            log.append(("late", w, token))
            return
        log.append(("wait", w, token))
        while (seen := b.poll(token)) is None:
            yield BLOCKED
        log.append((seen.value, w, token))
        if seen is Outcome.RELEASED:
            return


def remover(b: Barrier, victim: int, log: list):
    applied = yield from b.remove_steps(victim)
    log.append(("removed", victim, applied, b.membership_seq))


def joiner(b: Barrier, w: int, log: list):
    yield from b.join_steps(w)
    log.append(("joined", w, b.membership_seq))


class Run:
    def __init__(self, members, actors):
        self.pool = Pool(1 << 12, stripes=16)
        self.barrier = Barrier.create(self.pool, members)
        self.log = []
        self.procs = [make(self.barrier, arg, self.log) for make, arg in actors]
        self.done = [False] * len(self.procs)
        self.blocked_at = [None] * len(self.procs)
        self.steps = 0

    def enabled(self):
        word = self.barrier.word()
        return [i for i, d in enumerate(self.done)
                if not d and (self.blocked_at[i] is None or self.blocked_at[i] != word)]

    def step(self, i):
        self.steps += 1
        try:
            got = next(self.procs[i])
        except StopIteration:
            self.done[i] = True
            return
        self.blocked_at[i] = self.barrier.word() if got == BLOCKED else None


def explore(members, actors, check, limit=200_000):
    """Depth-first over every schedule; ``check(run)`` is called on each terminal state.

    The first child of each node continues on the live run; siblings are
    replayed from scratch since generators cannot be forked.
    """
    schedules = 0
    stack = [[]]
    while stack:
        prefix = stack.pop()
        run = Run(members, actors)
        for i in prefix:
            run.step(i)
        while True:
            choices = run.enabled()
            if not choices:
                break
            for i in reversed(choices[1:]):
                stack.append(prefix + [i])
            prefix = prefix + [choices[0]]
            run.step(choices[0])
        check(run)
        schedules += 1
        if schedules > limit:
            raise RuntimeError("schedule limit exceeded")
    return schedules
