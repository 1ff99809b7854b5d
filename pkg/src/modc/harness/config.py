"""Experiment configuration: defaults, validation and flat key=value files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..runtime import CRASH_POINTS, CrashSpec

__all__ = ["ConfigError", "ExperimentConfig", "parse_config_file", "DEFAULT_SIZES"]

DEFAULT_SIZES = (64, 256, 1024, 4096, 16384)

MODES = ("modc", "bsp")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "modc"
    workers: int = 8
    spares: int = 1
    scale: int = 14
    edge_factor: int = 16
    rmat: tuple = (0.57, 0.19, 0.19, 0.05)
    iters: int = 10
    target_rows: int = 256
    set_rows: int = 512
    ckpt_interval: int = 4
    crash: CrashSpec | None = None
    seed: int = 0
    run_seed: int | None = None
    beat_period: float = 1.0
    suspicion_timeout: float = 50.0
    pool_capacity: int = 4 << 30
    deterministic: bool = True
    time_scale: float = 20.0  # wall ms per virtual ms when threaded
    edges: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.crash, str):
            self.crash = parse_crash(self.crash)

    @property
    def runtime_seed(self) -> int:
        return self.seed if self.run_seed is None else self.run_seed

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.spares < 0:
            raise ConfigError("spares must be >= 0")
        if self.workers + self.spares > 64:
            raise ConfigError("at most 64 workers including spares")
        if self.edges is None and self.scale < 1:
            raise ConfigError("scale must be >= 1")
        if self.iters < 0:
            raise ConfigError("iters must be >= 0")
        for name in ("target_rows", "set_rows", "ckpt_interval", "edge_factor"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.time_scale <= 0:
            raise ConfigError("time_scale must be positive")
        if self.beat_period <= 0 or self.suspicion_timeout <= 0:
            raise ConfigError("beat_period and suspicion_timeout must be positive")
        if len(self.rmat) != 4 or abs(sum(self.rmat) - 1.0) > 1e-9 or min(self.rmat) < 0:
            raise ConfigError(f"rmat probabilities {self.rmat} must be 4 non-negative values summing to 1")
        if self.crash is not None:
            if not 0 <= self.crash.worker < self.workers:
                raise ConfigError(f"crash victim {self.crash.worker} must be an active worker (< {self.workers})")
            if not 1 <= self.crash.iteration <= self.iters:
                raise ConfigError(f"crash iteration {self.crash.iteration} outside [1, {self.iters}]")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_row(self) -> dict:
        crash = self.crash
        return {
            "mode": self.mode,
            "workers": self.workers,
            "spares": self.spares,
            "scale": self.scale,
            "iters": self.iters,
            "target_rows": self.target_rows,
            "set_rows": self.set_rows,
            "ckpt_interval": self.ckpt_interval,
            "crash_worker": "" if crash is None else crash.worker,
            "crash_iter": "" if crash is None else crash.iteration,
            "crash_point": "" if crash is None else crash.point,
            "seed": self.runtime_seed,
        }


def parse_crash(text: str) -> CrashSpec | None:
    if text in ("", "none", "None"):
        return None
    try:
        return CrashSpec.parse(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(
            f"bad crash spec {text!r}: expected worker=W,iter=I,point=P with P in {CRASH_POINTS}") from exc


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if name == "crash":
        return parse_crash(raw)
    if name == "rmat":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    default = getattr(ExperimentConfig(), name)
    if isinstance(default, bool):
        if raw.lower() not in _BOOL:
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if isinstance(default, int) and fields[name].type in ("int", int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if name == "run_seed":
        return int(raw)
    return raw


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines (``#`` comments, dashes or underscores in keys)."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"extra"}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return values
