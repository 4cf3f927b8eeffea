"""Streaming kernel SVM training: exact incremental SVM, LASVM and a batch SMO reference."""

from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint, save_model
from .core import Dataset, Model, decision_value, decision_values, predict, predict_many
from .data import PipeScanConfig, SplitSpec, generate_pipe_scan, load_dataset, split
from .evaluation import GridSpec, MetricsReport, evaluate, grid_search, learning_curve
from .isvm import IsvmState, train_isvm
from .kernel import KernelSpec
from .lasvm import EpochSchedule, LasvmState, train_online
from .smo import SmoConfig, solve
from .trainers import TrainerConfig, fit

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "Dataset", "EpochSchedule", "GridSpec", "IsvmState", "KernelSpec", "LasvmState",
    "MetricsReport", "Model", "PipeScanConfig", "SmoConfig", "SplitSpec", "TrainerConfig",
    "decision_value", "decision_values", "evaluate", "fit", "generate_pipe_scan", "grid_search",
    "learning_curve", "load_checkpoint", "load_dataset", "load_model", "predict", "predict_many",
    "save_checkpoint", "save_model", "solve", "split", "train_isvm", "train_online",
]
