"""Configuration, CLI, metrics files, rendering, and benchmarks."""

from .bench import BenchRow, dedupe_counts, run_bench, scaled_scenario
from .config import (
    OUT_DIR_ENV,
    RunBlock,
    RunConfig,
    load_run_config,
    parse_config,
)
from .frames import (
    FRAME_FORMAT,
    FRAME_VERSION,
    frame_record,
    header_record,
    read_frames,
    render_ppm,
)
from .metrics import COLUMNS, MetricsWriter, format_row, read_metrics
from .state import TrainerState, check_compat, load_state, save_state

__all__ = [
    "BenchRow",
    "COLUMNS",
    "FRAME_FORMAT",
    "FRAME_VERSION",
    "MetricsWriter",
    "OUT_DIR_ENV",
    "RunBlock",
    "RunConfig",
    "TrainerState",
    "check_compat",
    "dedupe_counts",
    "format_row",
    "frame_record",
    "header_record",
    "load_run_config",
    "load_state",
    "parse_config",
    "read_frames",
    "read_metrics",
    "render_ppm",
    "run_bench",
    "save_state",
    "scaled_scenario",
]
