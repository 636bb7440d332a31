from .config import ExperimentConfig, desk_config, grid_cells
from .grid import GridResult, Selection, run_grid, select_best, write_grid
from .speed import run_speed_benchmark
from .train import RunRecord, train_cell

__all__ = [
    "ExperimentConfig",
    "GridResult",
    "RunRecord",
    "Selection",
    "desk_config",
    "grid_cells",
    "run_grid",
    "run_speed_benchmark",
    "select_best",
    "train_cell",
    "write_grid",
]
