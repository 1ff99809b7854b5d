from __future__ import annotations

from dataclasses import dataclass

__all__ = ["CostModel"]


@dataclass(frozen=True)
class CostModel:
    """Virtual-time charges (milliseconds) used by the simulated executor.

    Each desk-scale nonzero and row is charged as if it stood for a block
    of a much larger matrix, so that compute dominates fixed latencies such
    as the suspicion timeout the way it does on a full-size input.  Only
    ordinal comparisons are drawn from these numbers.
    """

    step: float = 0.002          # one scheduler-loop action (pop, steal attempt, recovery scan)
    poll: float = 0.01           # first barrier spin-wait observation
    poll_max: float = 0.5        # spin-wait backoff ceiling
    task: float = 0.05           # dispatching a task: descriptor read, status CAS, slot write
    spawn: float = 0.01          # allocating and enqueueing a child task
    dep: float = 0.002           # one input registration or output publication
    nnz: float = 0.004           # one sparse multiply-add
    row: float = 0.004           # per-row finalisation (damping, store)
    vec_read: float = 0.0004     # reading one element of a shared dense vector
    ckpt_write: float = 0.0008   # writing one checkpoint element
    ckpt_read: float = 0.0008    # reading one checkpoint element on restart
    spare_start: float = 1.0     # hot-standby activation latency
