from .barrier import AlreadyMember, Barrier, BarrierError, NotMember, Outcome
from .deque import EMPTY, RETRY, NotOwner, QueueFull, WorkQueue
from .heartbeat import ALIVE, DEAD, INACTIVE, FailureDetector, HeartbeatTable

__all__ = [
    "AlreadyMember", "Barrier", "BarrierError", "NotMember", "Outcome",
    "EMPTY", "RETRY", "NotOwner", "QueueFull", "WorkQueue",
    "ALIVE", "DEAD", "INACTIVE", "FailureDetector", "HeartbeatTable",
]
