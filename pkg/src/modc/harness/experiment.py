"""Run experiments, check them against the oracle and tabulate metrics."""

from __future__ import annotations

import csv
import functools
import io
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..runtime import CostModel, CrashSpec, Runtime, SimulatedExecutor, ThreadedExecutor
from ..workloads import (
    CsrMatrix, bsp_pagerank, build_csr, oracle_pagerank, pagerank_driver, pagerank_task_count,
    read_edge_list, rmat_generate,
)
from .config import DEFAULT_SIZES, ConfigError, ExperimentConfig

__all__ = [
    "RunMetrics",
    "NORM_TOLERANCE",
    "load_graph",
    "run",
    "sweep_task_size",
    "sweep_crash_iteration",
    "crash_report",
    "write_csv",
    "RUN_FIELDS",
]

NORM_TOLERANCE = 1e-12

RUN_FIELDS = [
    "mode", "workers", "spares", "scale", "iters", "target_rows", "set_rows", "ckpt_interval",
    "crash_worker", "crash_iter", "crash_point", "seed", "total_time", "wall_time", "detection_latency",
    "tasks_executed", "tasks_reexecuted", "victim_queued", "steals_ok", "steals_failed",
    "checkpoint_time", "replay_iterations", "max_norm_error", "correct",
]


@dataclass
class RunMetrics:
    config: ExperimentConfig
    total_time: float = 0.0
    wall_time: float = 0.0
    per_iteration_times: list = field(default_factory=list)
    detection_latency: float | None = None
    tasks_executed: int = 0
    tasks_reexecuted: int = 0
    victim_queued: int | None = None
    steals_ok: int = 0
    steals_failed: int = 0
    checkpoint_time: float = 0.0
    replay_iterations: int = 0
    max_norm_error: float = 0.0
    correct: bool = False
    concurrent_runs: int = 0
    crash_fired: bool = False
    ranks: np.ndarray | None = field(default=None, repr=False)

    @property
    def normalized(self) -> bool:
        return self.max_norm_error <= NORM_TOLERANCE

    def row(self) -> dict:
        row = self.config.as_row()
        row.update({
            "total_time": f"{self.total_time:.6f}",
            "wall_time": f"{self.wall_time:.6f}",
            "detection_latency": "" if self.detection_latency is None else f"{self.detection_latency:.6f}",
            "tasks_executed": self.tasks_executed,
            "tasks_reexecuted": self.tasks_reexecuted,
            "victim_queued": "" if self.victim_queued is None else self.victim_queued,
            "steals_ok": self.steals_ok,
            "steals_failed": self.steals_failed,
            "checkpoint_time": f"{self.checkpoint_time:.6f}",
            "replay_iterations": self.replay_iterations,
            "max_norm_error": f"{self.max_norm_error:.3e}",
            "correct": int(self.correct),
        })
        return row


@functools.lru_cache(maxsize=8)
def _rmat_csr(scale, edge_factor, rmat, seed) -> CsrMatrix:
    return build_csr(rmat_generate(scale, edge_factor, *rmat, seed=seed), 1 << scale)


@functools.lru_cache(maxsize=4)
def _file_csr(path) -> CsrMatrix:
    edges = read_edge_list(path)
    n = int(edges.max()) + 1 if len(edges) else 1
    return build_csr(edges, n)


def load_graph(cfg: ExperimentConfig) -> CsrMatrix:
    if cfg.edges:
        return _file_csr(cfg.edges)
    return _rmat_csr(cfg.scale, cfg.edge_factor, tuple(cfg.rmat), cfg.seed)


def _norm_error(history) -> float:
    return max((abs(math.fsum(v.tolist()) - 1.0) for v in history[1:]), default=0.0)


def _iteration_times(release_times: dict, iters: int) -> list:
    out, prev = [], 0.0
    for it in range(iters):
        t = release_times.get(it)
        if t is None:
            out.append(float("nan"))
            continue
        out.append(t - prev)
        prev = t
    return out


def run(cfg: ExperimentConfig, costs: CostModel | None = None) -> RunMetrics:
    """Build the graph, run one experiment, and validate it bitwise against the oracle."""
    cfg.validate()
    csr = load_graph(cfg)
    reference = oracle_pagerank(csr, cfg.iters)
    rt = Runtime(cfg.workers, cfg.spares, pool_capacity=cfg.pool_capacity, seed=cfg.runtime_seed,
                 beat_period=cfg.beat_period, suspicion_timeout=cfg.suspicion_timeout,
                 costs=costs or CostModel())
    rt.crash = cfg.crash
    if cfg.deterministic:
        executor = SimulatedExecutor(seed=cfg.runtime_seed)
    else:
        executor = ThreadedExecutor(time_scale=cfg.time_scale)
    start = time.perf_counter()
    metrics = RunMetrics(cfg)
    if cfg.mode == "modc":
        result = pagerank_driver(rt, csr, cfg.iters, cfg.target_rows, executor=executor)
        release = result.stats.job_release_times if result.stats else {}
        metrics.per_iteration_times = _iteration_times(release, cfg.iters)
    else:
        result = bsp_pagerank(rt, csr, cfg.iters, cfg.set_rows, cfg.ckpt_interval, executor=executor)
        metrics.checkpoint_time = result.checkpoint_time
        metrics.replay_iterations = result.replay_iterations
        shifted = {it - 1: t for it, t in result.iteration_times.items() if t is not None}
        metrics.per_iteration_times = _iteration_times(shifted, cfg.iters)
    metrics.wall_time = time.perf_counter() - start
    stats = result.stats
    if stats is not None:
        metrics.total_time = stats.total_time
        metrics.tasks_executed = stats.tasks_executed
        metrics.tasks_reexecuted = stats.tasks_reexecuted
        metrics.steals_ok = stats.steals_ok
        metrics.steals_failed = stats.steals_failed
        metrics.concurrent_runs = stats.concurrent_runs
        if stats.crash:
            metrics.crash_fired = True
            metrics.victim_queued = stats.crash["queued"]
            mine = [p["time"] for p in stats.pronouncements if p["worker"] == stats.crash["worker"]]
            if mine:
                metrics.detection_latency = min(mine) - stats.crash["time"]
    metrics.ranks = result.ranks
    metrics.max_norm_error = _norm_error(result.history)
    metrics.correct = (result.ranks.dtype == reference.dtype
                       and result.ranks.tobytes() == reference.tobytes())
    try:
        rt.pool.close()
    except BufferError:
        pass  # worker caches still hold zero-copy views; the mapping goes with them
    return metrics


def write_csv(rows, path=None, fields=None) -> str:
    """Write dict rows as CSV (to ``path`` if given); returns the text."""
    rows = list(rows)
    fields = fields or (list(rows[0]) if rows else RUN_FIELDS)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


SIZE_FIELDS = ["size", "tasks_executed", "expected_tasks", "total_time", "relative_to_best", "correct"]


def sweep_task_size(base: ExperimentConfig, sizes=DEFAULT_SIZES, out=None):
    """One MODC run per leaf size; returns ``(rows, metrics)``."""
    if base.mode != "modc":
        raise ConfigError("task-size sweep requires mode=modc")
    if not sizes:
        raise ConfigError("no task sizes given")
    runs = []
    for size in sizes:
        cfg = base.replace(target_rows=int(size), crash=None)
        runs.append(run(cfg))
    best = min(m.total_time for m in runs)
    rows = []
    for size, m in zip(sizes, runs):
        n = load_graph(m.config).n
        rows.append({
            "size": size,
            "tasks_executed": m.tasks_executed,
            "expected_tasks": pagerank_task_count(n, int(size), base.iters),
            "total_time": f"{m.total_time:.6f}",
            "relative_to_best": f"{m.total_time / best:.6f}" if best > 0 else "1.000000",
            "correct": int(m.correct),
        })
    write_csv(rows, out, SIZE_FIELDS)
    return rows, runs


CRASH_FIELDS = ["mode", "crash_iter", "crash_point", "runs", "total_time", "failure_free_time",
                "penalty_vs_failure_free", "replay_iterations", "tasks_reexecuted", "detection_latency",
                "correct"]


def sweep_crash_iteration(base: ExperimentConfig, modes=("modc", "bsp"), points=("mid_task",),
                          repeats: int = 1, victim: int | None = None, out=None, progress=None):
    """Crash runs for every iteration 1..iters, per mode and crash point.

    Times are averaged over ``repeats`` runtime seeds.  Returns
    ``(rows, runs)`` where ``runs`` lists every individual
    :class:`RunMetrics`.
    """
    if base.iters < 1:
        raise ConfigError("crash sweep needs iters >= 1")
    victim = (base.crash.worker if base.crash else min(1, base.workers - 1)) if victim is None else victim
    seeds = [base.runtime_seed + r for r in range(repeats)]
    rows, runs = [], []
    for mode in modes:
        free = [run(base.replace(mode=mode, crash=None, run_seed=s)) for s in seeds]
        runs.extend(free)
        free_time = statistics.fmean(m.total_time for m in free)
        for point in points:
            for it in range(1, base.iters + 1):
                batch = []
                for s in seeds:
                    cfg = base.replace(mode=mode, crash=CrashSpec(victim, it, point), run_seed=s)
                    m = run(cfg)
                    batch.append(m)
                    if progress:
                        progress(m)
                runs.extend(batch)
                mean = statistics.fmean(m.total_time for m in batch)
                latencies = [m.detection_latency for m in batch if m.detection_latency is not None]
                rows.append({
                    "mode": mode,
                    "crash_iter": it,
                    "crash_point": point,
                    "runs": len(batch),
                    "total_time": f"{mean:.6f}",
                    "failure_free_time": f"{free_time:.6f}",
                    "penalty_vs_failure_free": f"{(mean - free_time) / free_time:.6f}",
                    "replay_iterations": batch[0].replay_iterations,
                    "tasks_reexecuted": max(m.tasks_reexecuted for m in batch),
                    "detection_latency": f"{statistics.fmean(latencies):.6f}" if latencies else "",
                    "correct": int(all(m.correct for m in batch)),
                })
    write_csv(rows, out, CRASH_FIELDS)
    return rows, runs


def crash_report(rows, ckpt_interval: int) -> str:
    """Human-readable comparison of crash penalties by mode."""
    lines = []
    by_mode: dict = {}
    for r in rows:
        by_mode.setdefault((r["mode"], r["crash_point"]), []).append(r)
    for (mode, point), group in by_mode.items():
        lines.append(f"{mode} (crash point {point}); failure-free time {float(group[0]['failure_free_time']):.1f}")
        lines.append("  iter  time        penalty   replay  reexec  correct")
        for r in group:
            lines.append(f"  {r['crash_iter']:>4}  {float(r['total_time']):>10.1f}  "
                         f"{100 * float(r['penalty_vs_failure_free']):>7.2f}%  {r['replay_iterations']:>6}  "
                         f"{r['tasks_reexecuted']:>6}  {'yes' if r['correct'] else 'NO'}")
        worst = max(group, key=lambda r: float(r["total_time"]))
        lines.append(f"  worst: crash at iteration {worst['crash_iter']} "
                     f"(+{100 * float(worst['penalty_vs_failure_free']):.2f}%)")
        if mode == "bsp":
            by_res: dict = {}
            for r in group:
                by_res.setdefault((r["crash_iter"] - 1) % ckpt_interval, []).append(float(r["total_time"]))
            means = [statistics.fmean(by_res[k]) for k in sorted(by_res)]
            lines.append("  mean time by iterations since checkpoint: "
                         + ", ".join(f"{k + 1}: {v:.1f}" for k, v in zip(sorted(by_res), means)))
    return "\n".join(lines)


def metrics_dict(m: RunMetrics) -> dict:
    d = asdict(m)
    d.pop("ranks", None)
    return d
