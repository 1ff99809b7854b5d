"""Pool layouts for task, job and worker records, plus the function registry."""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field

from ..pool import Pool

__all__ = [
    "Status",
    "TaskDescriptor",
    "FunctionRegistry",
    "DuplicateFnId",
    "UnknownFunction",
    "UnknownJob",
    "TaskFault",
    "encode_closure",
    "decode_closure",
    "fn_id_of",
    "CRASH_POINTS",
    "CrashSpec",
]


class Status(enum.IntEnum):
    CREATED = 1
    WAITING = 2
    READY = 3
    RUNNING = 4
    DONE = 5
    FAILED = 6


def status_word(status: int, epoch: int) -> int:
    """Task status word: execution epoch above a one-byte status code.

    The epoch counts READY->RUNNING transitions, so a stale executor's
    RUNNING->DONE CAS cannot succeed against a later attempt.
    """
    return epoch << 8 | int(status)


def split_status(word: int) -> tuple[Status, int]:
    return Status(word & 0xFF), word >> 8


class DuplicateFnId(Exception):
    pass


class UnknownJob(Exception):
    pass


class TaskFault(RuntimeError):
    """A task function failed deterministically; the run is aborted."""


class UnknownFunction(TaskFault):
    pass


def fn_id_of(fn) -> int:
    if isinstance(fn, int):
        return fn
    return int.from_bytes(hashlib.blake2b(str(fn).encode(), digest_size=8).digest(), "little")


_CLOSURE_HEAD = struct.Struct("<QQ")


def encode_closure(fn_id: int, args) -> bytes:
    body = json.dumps(args, sort_keys=True, separators=(",", ":")).encode()
    return _CLOSURE_HEAD.pack(fn_id, len(body)) + body


def decode_closure(blob: bytes):
    fn_id, n = _CLOSURE_HEAD.unpack_from(blob)
    return fn_id, json.loads(blob[16:16 + n])


class FunctionRegistry:
    """Maps function ids to callables ``fn(ctx, args) -> {output: bytes}``."""

    def __init__(self):
        self._fns: dict[int, object] = {}
        self._names: dict[int, str] = {}

    def register(self, name, fn) -> int:
        fid = fn_id_of(name)
        if fid in self._fns:
            raise DuplicateFnId(f"function id {name!r} already registered")
        self._fns[fid] = fn
        self._names[fid] = str(name)
        return fid

    def lookup(self, fid: int):
        try:
            return self._fns[fid]
        except KeyError:
            raise UnknownFunction(f"no function registered under id {fid}") from None

    def name(self, fid: int) -> str:
        return self._names.get(fid, str(fid))

    def __contains__(self, name):
        return fn_id_of(name) in self._fns


# task descriptor layout
T_STATUS = 0
T_JOB = 8
T_ID = 16
T_CLOSURE = 24
T_CLOSURE_LEN = 32
T_IO = 40
T_IO_LEN = 48
T_KEY = 56
T_KEY_LEN = 64
TASK_SIZE = 80


@dataclass
class TaskDescriptor:
    """Decoded view of a pool-resident task record."""

    addr: int
    job_id: int
    task_id: int
    status: Status
    epoch: int
    fn_id: int
    args: object
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    key: str | None = None

    @classmethod
    def write(cls, pool: Pool, job_id, task_id, fn_id, args, inputs, outputs, key) -> int:
        closure = encode_closure(fn_id, args)
        io = json.dumps([list(inputs), list(outputs)]).encode()
        addr = pool.alloc(TASK_SIZE, 16)
        c = pool.alloc(len(closure))
        pool.write(c, closure)
        i = pool.alloc(len(io))
        pool.write(i, io)
        pool.store64(addr + T_JOB, job_id)
        pool.store64(addr + T_ID, task_id)
        pool.store64(addr + T_CLOSURE, c)
        pool.store64(addr + T_CLOSURE_LEN, len(closure))
        pool.store64(addr + T_IO, i)
        pool.store64(addr + T_IO_LEN, len(io))
        if key is not None:
            k = key.encode()
            ka = pool.alloc(max(len(k), 1))
            pool.write(ka, k)
            pool.store64(addr + T_KEY, ka)
            pool.store64(addr + T_KEY_LEN, len(k))
        pool.store64(addr + T_STATUS, status_word(Status.CREATED, 0))
        return addr

    @classmethod
    def read(cls, pool: Pool, addr: int) -> "TaskDescriptor":
        status, epoch = split_status(pool.load64(addr + T_STATUS))
        fn_id, args = decode_closure(pool.read(pool.load64(addr + T_CLOSURE), pool.load64(addr + T_CLOSURE_LEN)))
        inputs, outputs = json.loads(pool.read(pool.load64(addr + T_IO), pool.load64(addr + T_IO_LEN)))
        key = None
        if pool.load64(addr + T_KEY):
            key = pool.read(pool.load64(addr + T_KEY), pool.load64(addr + T_KEY_LEN)).decode()
        return cls(addr, pool.load64(addr + T_JOB), pool.load64(addr + T_ID), status, epoch,
                   fn_id, args, inputs, outputs, key)


# job record layout
J_STATE = 0
J_PRED = 8
J_BARRIER = 16
J_TASKS = 24
J_RELEASED_AT = 32
JOB_SIZE = 64
JOB_UNUSED, JOB_OPEN, JOB_COMPLETE = 0, 1, 2

# worker record layout
W_QUEUE = 0
W_SLOT = 8
W_ROLE = 16
W_REPLACED = 24
WORKER_SIZE = 64
ROLE_SPARE, ROLE_ACTIVE = 1, 2
NO_SPARE = (1 << 64) - 1

CRASH_POINTS = ("pre_running_cas", "mid_task", "post_publish_pre_done", "in_barrier_wait", "idle")


@dataclass(frozen=True)
class CrashSpec:
    """Halt ``worker`` the first time it reaches ``point`` at or after ``iteration``."""

    worker: int
    iteration: int
    point: str

    def __post_init__(self):
        if self.point not in CRASH_POINTS:
            raise ValueError(f"unknown crash point {self.point!r}; expected one of {CRASH_POINTS}")

    @classmethod
    def parse(cls, text: str) -> "CrashSpec":
        fields = dict(part.split("=", 1) for part in text.split(","))
        return cls(int(fields["worker"]), int(fields["iter"]), fields["point"])
