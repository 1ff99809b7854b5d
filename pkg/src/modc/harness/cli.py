"""``modc`` command line: single runs, task-size sweeps and crash sweeps."""

from __future__ import annotations

import argparse
import sys

from ..runtime import CRASH_POINTS
from .config import DEFAULT_SIZES, ConfigError, ExperimentConfig, parse_config_file, parse_crash
from .experiment import RUN_FIELDS, crash_report, run, sweep_crash_iteration, sweep_task_size, write_csv

__all__ = ["main", "build_parser", "resolve_config"]

# flag dest -> config field
_FLAG_FIELDS = {
    "mode": "mode", "workers": "workers", "spares": "spares", "scale": "scale",
    "edge_factor": "edge_factor", "iters": "iters", "target_rows": "target_rows",
    "set_rows": "set_rows", "ckpt_interval": "ckpt_interval", "crash": "crash", "seed": "seed",
    "beat_period": "beat_period", "suspicion_timeout": "suspicion_timeout",
    "pool_capacity": "pool_capacity", "edges": "edges", "time_scale": "time_scale",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--mode", choices=("modc", "bsp"))
    common.add_argument("--workers", type=int)
    common.add_argument("--spares", type=int)
    common.add_argument("--scale", type=int, help="RMAT log2 vertex count")
    common.add_argument("--edge-factor", type=int)
    common.add_argument("--edges", help="edge-list file to use instead of RMAT")
    common.add_argument("--iters", type=int)
    common.add_argument("--target-rows", type=int, help="leaf size of the recursive decomposition (modc)")
    common.add_argument("--set-rows", type=int, help="rows per statically assigned set (bsp)")
    common.add_argument("--ckpt-interval", type=int, help="iterations between checkpoints (bsp)")
    common.add_argument("--crash", help=f"worker=W,iter=I,point=P; P in {'|'.join(CRASH_POINTS)}")
    common.add_argument("--seed", type=int)
    common.add_argument("--beat-period", type=float)
    common.add_argument("--suspicion-timeout", type=float)
    common.add_argument("--pool-capacity", type=int)
    common.add_argument("--time-scale", type=float,
                        help="wall milliseconds per virtual millisecond with --threaded (default 20)")
    common.add_argument("--out", help="CSV output path")
    det = common.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic", action="store_true", default=None,
                     help="virtual-time simulated executor (reproducible)")
    det.add_argument("--threaded", dest="deterministic", action="store_false",
                     help="one OS thread per worker on the wall clock")

    parser = argparse.ArgumentParser(prog="modc", description="Resilient task runtime experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one run, validated against the oracle")
    sizes = sub.add_parser("sweep-task-size", parents=[common], help="MODC time versus leaf size")
    sizes.add_argument("--sizes", default=",".join(map(str, DEFAULT_SIZES)),
                       help="comma-separated target_rows values")
    crash = sub.add_parser("sweep-crash", parents=[common], help="crash at every iteration, per mode")
    crash.add_argument("--points", default="mid_task", help="comma-separated crash points")
    crash.add_argument("--victim", type=int, help="worker to crash (default: from --crash, else 1)")
    crash.add_argument("--repeats", type=int, default=1, help="runtime seeds averaged per cell")
    crash.add_argument("--modes", default="modc,bsp", help="comma-separated modes (--mode restricts)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    values = parse_config_file(args.config) if args.config else {}
    for dest, name in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = parse_crash(v) if name == "crash" else v
    if args.deterministic is not None:
        values["deterministic"] = args.deterministic
    return ExperimentConfig(**values).validate()


def _cmd_run(cfg, args) -> int:
    m = run(cfg)
    write_csv([m.row()], args.out, RUN_FIELDS)
    print(write_csv([m.row()], None, RUN_FIELDS), end="")
    print(f"mode={cfg.mode} time={m.total_time:.2f} tasks={m.tasks_executed} "
          f"reexecuted={m.tasks_reexecuted} max|sum-1|={m.max_norm_error:.2e}")
    if m.crash_fired:
        lat = "n/a" if m.detection_latency is None else f"{m.detection_latency:.2f}"
        print(f"crash fired: victim queue {m.victim_queued}, detection latency {lat}, "
              f"replay iterations {m.replay_iterations}")
    elif cfg.crash is not None:
        print("crash point was never reached")
    print("result matches oracle bitwise" if m.correct else "RESULT DOES NOT MATCH ORACLE")
    return 0 if m.correct and m.normalized else 1


def _cmd_sizes(cfg, args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows, runs = sweep_task_size(cfg, sizes, args.out)
    print(write_csv(rows), end="")
    ok = all(m.correct and m.normalized for m in runs)
    for r in rows:
        if r["tasks_executed"] != r["expected_tasks"]:
            print(f"size {r['size']}: executed {r['tasks_executed']} tasks, tree formula says {r['expected_tasks']}")
            ok = False
    print("all runs match oracle bitwise" if ok else "CORRECTNESS FAILURE")
    return 0 if ok else 1


def _cmd_crash(cfg, args) -> int:
    modes = [cfg.mode] if args.mode else [m for m in args.modes.split(",") if m]
    points = [p for p in args.points.split(",") if p]
    for p in points:
        if p not in CRASH_POINTS:
            raise ConfigError(f"unknown crash point {p!r}")
    victim = args.victim
    if victim is not None and not 0 <= victim < cfg.workers:
        raise ConfigError(f"victim {victim} must be an active worker (< {cfg.workers})")
    rows, runs = sweep_crash_iteration(cfg, modes, points, args.repeats, victim, args.out)
    print(write_csv(rows), end="")
    print()
    print(crash_report(rows, cfg.ckpt_interval))
    ok = all(m.correct and m.normalized for m in runs)
    print("all runs match oracle bitwise" if ok else "CORRECTNESS FAILURE")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        handler = {"run": _cmd_run, "sweep-task-size": _cmd_sizes, "sweep-crash": _cmd_crash}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"modc: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
