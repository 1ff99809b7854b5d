import struct

import pytest

from modc.runtime import (
    CRASH_POINTS, CrashSpec, DuplicateFnId, Runtime, SimulatedExecutor, Status, TaskFault, ThreadedExecutor,
    UnknownFunction, UnknownJob,
)
from modc.runtime.descriptors import decode_closure, encode_closure

I64 = struct.Struct("<q")


def fan_in_program(rt: Runtime, leaves: int = 24, jobs: int = 3, log=None):
    """Per job: a root spawning ``leaves`` producers and one summing consumer."""

    def leaf(ctx, args):
        ctx.charge(0.5)
        if log is not None:
            log.append(("leaf", ctx.job_id))
        return {f"{args['job']}:out:{args['i']}": I64.pack(args["i"] * (args["job"] + 1))}

    def total(ctx, args):
        names = [f"{args['job']}:out:{i}" for i in range(args["n"])]
        return {f"{args['job']}:total": I64.pack(sum(I64.unpack(ctx.get(n))[0] for n in names))}

    def root(ctx, args):
        j = args["job"]
        for i in range(args["n"]):
            ctx.spawn_task("leaf", {"i": i, "job": j}, outputs=[f"{j}:out:{i}"])
        ctx.spawn_task("total", args, inputs=[f"{j}:out:{i}" for i in range(args["n"])], outputs=[f"{j}:total"])
        if j + 1 < args["jobs"]:
            nxt = ctx.spawn_job()
            ctx.spawn_task("root", dict(args, job=j + 1), job=nxt)
        return {}

    rt.register_function("leaf", leaf)
    rt.register_function("total", total)
    rt.register_function("root", root)
    job = rt.spawn_job()
    rt.spawn_task(job, "root", {"job": 0, "n": leaves, "jobs": jobs}, key="root")
    expected = {f"{j}:total": sum(i * (j + 1) for i in range(leaves)) for j in range(jobs)}
    return expected, jobs * (leaves + 2)


def totals(rt, expected):
    return {k: I64.unpack(rt.names.get(k))[0] for k in expected}


def small_runtime(workers=4, spares=1, **kw):
    return Runtime(workers, spares, pool_capacity=64 << 20, name_capacity=1 << 12, **kw)


def test_failure_free_exactly_once():
    rt = small_runtime()
    expected, tasks = fan_in_program(rt)
    st = rt.run()
    assert totals(rt, expected) == expected
    assert st.tasks_executed == st.tasks_spawned == tasks
    assert st.tasks_reexecuted == 0 and st.concurrent_runs == 0
    assert sorted(st.job_release_times) == [0, 1, 2]


def test_jobs_are_ordered_by_control_dependency():
    log = []
    rt = small_runtime()
    fan_in_program(rt, log=log)
    rt.run()
    jobs = [j for _, j in log]
    assert jobs == sorted(jobs)


@pytest.mark.parametrize("point", CRASH_POINTS)
@pytest.mark.parametrize("iteration", [1, 2, 3])
def test_single_crash_is_recovered(point, iteration):
    rt = small_runtime(seed=iteration)
    expected, tasks = fan_in_program(rt)
    rt.crash = CrashSpec(1, iteration, point)
    st = rt.run()
    assert totals(rt, expected) == expected
    assert st.tasks_spawned == tasks
    if point == "in_barrier_wait" and st.crash is None:
        return  # the victim was the releasing arrival and never waited
    assert st.crash is not None
    assert st.tasks_reexecuted <= st.crash["queued"] + 1
    if not st.pronouncements:
        # crashed after arriving at the final barrier: nothing left to recover
        assert point == "in_barrier_wait" and iteration == 3
        return
    assert [p["worker"] for p in st.pronouncements] == [1]
    assert st.activations and st.activations[0]["spare"] == 4


def test_crash_without_spare_still_completes():
    rt = small_runtime(spares=0)
    expected, _ = fan_in_program(rt)
    rt.crash = CrashSpec(2, 2, "mid_task")
    st = rt.run()
    assert totals(rt, expected) == expected
    assert st.activations == []


def test_recovered_task_status_is_done():
    rt = small_runtime()
    fan_in_program(rt, jobs=1)
    rt.crash = CrashSpec(0, 1, "post_publish_pre_done")
    rt.run()
    for j in range(rt.job_count):
        assert rt.job_state(j) == 2


def test_deterministic_replay():
    def once():
        rt = small_runtime(seed=11)
        fan_in_program(rt)
        rt.crash = CrashSpec(1, 2, "mid_task")
        st = rt.run()
        return st.total_time, st.tasks_executed, st.steals_ok

    assert once() == once()


def test_false_suspicion_is_fenced():
    rt = small_runtime()
    expected, _ = fan_in_program(rt)

    def accuse(ctx, args):
        ctx.runtime.hb.pronounce_dead(args["w"])
        return {}

    rt.register_function("accuse", accuse)
    rt.spawn_task(0, "accuse", {"w": 2})
    st = rt.run()
    assert totals(rt, expected) == expected
    assert rt.hb.is_dead(2)


def test_threaded_executor_with_crash():
    rt = small_runtime(beat_period=1.0, suspicion_timeout=200.0)
    expected, _ = fan_in_program(rt, leaves=8)
    rt.crash = CrashSpec(1, 2, "idle")
    rt.run(ThreadedExecutor(timeout=120))
    assert totals(rt, expected) == expected


def test_errors():
    rt = small_runtime()
    rt.register_function("f", lambda ctx, args: {})
    with pytest.raises(DuplicateFnId):
        rt.register_function("f", lambda ctx, args: {})
    with pytest.raises(UnknownJob):
        rt.spawn_task(3, "f")
    with pytest.raises(UnknownJob):
        rt.spawn_job(predecessor=7)


def test_task_fault_aborts_run():
    rt = small_runtime()
    rt.register_function("boom", lambda ctx, args: 1 / 0)
    rt.spawn_task(rt.spawn_job(), "boom")
    with pytest.raises(TaskFault):
        rt.run()


def test_undeclared_output_is_a_fault():
    rt = small_runtime()
    rt.register_function("liar", lambda ctx, args: {})
    rt.spawn_task(rt.spawn_job(), "liar", outputs=["x"])
    with pytest.raises(TaskFault):
        rt.run()


def test_unknown_function_is_a_fault():
    rt = small_runtime()
    ref_job = rt.spawn_job()
    rt.spawn_task(ref_job, "never-registered")
    with pytest.raises(UnknownFunction):
        rt.run()


def test_keyed_spawn_is_idempotent():
    rt = small_runtime()
    rt.register_function("f", lambda ctx, args: {})
    j = rt.spawn_job()
    a = rt.spawn_task(j, "f", key="k")
    b = rt.spawn_task(j, "f", key="k")
    assert a == b
    assert rt.counter(40) == 1
    assert rt.spawn_job(key="next") == rt.spawn_job(key="next")


def test_closure_roundtrip():
    blob = encode_closure(42, {"a": [1, 2], "b": "x"})
    assert decode_closure(blob) == (42, {"a": [1, 2], "b": "x"})


def test_status_word_epochs():
    from modc.runtime.descriptors import split_status, status_word
    assert split_status(status_word(Status.RUNNING, 3)) == (Status.RUNNING, 3)


def test_simulated_executor_orders_by_virtual_time():
    ex = SimulatedExecutor(seed=1)
    seen = []

    def ent(name, costs):
        for c in costs:
            seen.append((ex.now(), name))
            yield c

    ex.spawn("a", ent("a", [3, 3]))
    ex.spawn("b", ent("b", [1, 1, 1, 1]))
    ex.run()
    assert [t for t, _ in seen] == sorted(t for t, _ in seen)
