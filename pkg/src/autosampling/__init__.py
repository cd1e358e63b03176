"""Population-based search for data sampling schedules."""

__version__ = "0.1.0"

from .core import (
    Dataset,
    RngStream,
    SamplingDistribution,
    SamplingSchedule,
    load_distribution,
    load_model,
    load_schedule,
    save_distribution,
    save_model,
    save_schedule,
)
from .sampling import (
    SmoothingParams,
    draw_schedule,
    draw_uniform_epoch_schedule,
    estimate_distribution,
    smooth_distribution,
)
from .search import SearchConfig, SearchResult, plain_sgd_baseline, run_autosampling
from .trainer import Architecture, ModelState, SyntheticSpec, TrainHyper, gen_synthetic_dataset

__all__ = [
    "Architecture",
    "Dataset",
    "ModelState",
    "RngStream",
    "SamplingDistribution",
    "SamplingSchedule",
    "SearchConfig",
    "SearchResult",
    "SmoothingParams",
    "SyntheticSpec",
    "TrainHyper",
    "draw_schedule",
    "draw_uniform_epoch_schedule",
    "estimate_distribution",
    "gen_synthetic_dataset",
    "load_distribution",
    "load_model",
    "load_schedule",
    "plain_sgd_baseline",
    "run_autosampling",
    "save_distribution",
    "save_model",
    "save_schedule",
    "smooth_distribution",
]
