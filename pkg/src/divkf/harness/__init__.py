"""Seeded experiment sweeps over the radar, sensor-network and options scenarios."""

from .config import ExperimentConfig, default_config, load_config
from .io import emit_results, rows_from_csv, rows_to_csv
from .runner import FilterSpec, ResultRow, run_filter, run_sweep
from .scenarios import SweepPoint, TrajectoryRecord, generate_trajectory

__all__ = [
    "ExperimentConfig", "FilterSpec", "ResultRow", "SweepPoint", "TrajectoryRecord",
    "default_config", "emit_results", "generate_trajectory", "load_config", "rows_from_csv",
    "rows_to_csv", "run_filter", "run_sweep",
]
