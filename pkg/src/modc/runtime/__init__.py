from .costs import CostModel
from .descriptors import (
    CRASH_POINTS, CrashSpec, DuplicateFnId, FunctionRegistry, Status, TaskDescriptor, TaskFault,
    UnknownFunction, UnknownJob,
)
from .executor import RuntimeStalled, SimulatedExecutor, ThreadedExecutor, WorkerCrashed, WorkerHalted
from .scheduler import NoSpare, RunStats, Runtime, RuntimeConfig, TaskContext, Worker, done_name

__all__ = [
    "CostModel", "CRASH_POINTS", "CrashSpec", "DuplicateFnId", "FunctionRegistry", "Status",
    "TaskDescriptor", "TaskFault", "UnknownFunction", "UnknownJob", "RuntimeStalled",
    "SimulatedExecutor", "ThreadedExecutor", "WorkerCrashed", "WorkerHalted", "NoSpare", "RunStats",
    "Runtime", "RuntimeConfig", "TaskContext", "Worker", "done_name",
]
