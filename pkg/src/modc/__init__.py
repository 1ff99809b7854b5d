"""Resilient decentralized task runtime over a shared memory pool."""

from .namestore import ConflictingPublish, NameStore
from .pool import Pool
from .runtime import CrashSpec, Runtime, SimulatedExecutor, ThreadedExecutor

__version__ = "0.1.0"

__all__ = ["Pool", "NameStore", "ConflictingPublish", "Runtime", "CrashSpec", "SimulatedExecutor",
           "ThreadedExecutor"]
