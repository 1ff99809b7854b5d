from .clock import DetectorTrace, detector_trace, random_freeze_schedule
from .config import DEFAULT_SIZES, ConfigError, ExperimentConfig, parse_config_file
from .experiment import (
    NORM_TOLERANCE, RunMetrics, crash_report, load_graph, run, sweep_crash_iteration, sweep_task_size,
    write_csv,
)

__all__ = [
    "DetectorTrace", "detector_trace", "random_freeze_schedule", "DEFAULT_SIZES", "ConfigError",
    "ExperimentConfig", "parse_config_file", "NORM_TOLERANCE", "RunMetrics", "crash_report", "load_graph",
    "run", "sweep_crash_iteration", "sweep_task_size", "write_csv",
]
