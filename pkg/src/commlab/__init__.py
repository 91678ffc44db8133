"""Communication metrics, performance model, simulated process grid and
filter diagonalization for distributed sparse matrix-multiple-vector products."""

from .matgen import MatrixSpec, create_source, dimension, pattern_stats
from .layout import (build_redistribution_plan, make_layout, matching_stack,
                     redistribution_volume, uniform_row_partition)
from .commstats import compute_comm_metrics, compute_comm_metrics_many
from .perfmodel import ModelParams

__version__ = "0.1.0"

__all__ = [
    "MatrixSpec", "create_source", "dimension", "pattern_stats",
    "uniform_row_partition", "make_layout", "matching_stack",
    "build_redistribution_plan", "redistribution_volume",
    "compute_comm_metrics", "compute_comm_metrics_many", "ModelParams",
]
