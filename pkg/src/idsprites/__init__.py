"""Procedural 2D sprite streams for continual classification.

Shapes are random spline outlines rendered under a grid of scale,
orientation and position. A task stream is a pure function of its seeds.
On top of the generator sit an exemplar-memory classifier that normalizes
inputs to canonical pose before a nearest-exemplar lookup, and the replay,
fine-tuning and contrastive baselines it is compared against.
"""

from .errors import ConfigError, EstimationError, ExemplarBufferError, FormatError, IDSpritesError
from .harness import ExperimentConfig, MetricsLog, one_shot_eval, open_set_eval, run_experiment
from .kernels import BACKEND
from .memory import ExemplarBuffer, classify, detect_novel, pr_curve
from .raster import Latents, latents_to_matrix, render, warp
from .regressor import AnalyticEstimator, TinyNet, analytic_estimate
from .shapegen import GenConfig, ShapeSpec, sample_shape
from .stream import FactorGrid, StreamConfig, TaskDataset, make_task, read_dataset, task_split, write_dataset

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AnalyticEstimator",
    "ConfigError",
    "EstimationError",
    "ExemplarBuffer",
    "ExemplarBufferError",
    "ExperimentConfig",
    "FactorGrid",
    "FormatError",
    "GenConfig",
    "IDSpritesError",
    "Latents",
    "MetricsLog",
    "ShapeSpec",
    "StreamConfig",
    "TaskDataset",
    "TinyNet",
    "analytic_estimate",
    "classify",
    "detect_novel",
    "latents_to_matrix",
    "make_task",
    "one_shot_eval",
    "open_set_eval",
    "pr_curve",
    "read_dataset",
    "render",
    "run_experiment",
    "sample_shape",
    "task_split",
    "warp",
    "write_dataset",
]
