"""Activation-graph classification of patients with multimodal tabular features."""

from .config import TrainConfig, load_config, parse_config
from .dataio import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .kernels import BACKEND
from .metrics import MetricReport, compute_metrics
from .pipeline import kfold_evaluate, run_ablation, run_sweep, train_fold

__all__ = [
    "BACKEND",
    "Dataset",
    "MetricReport",
    "SyntheticSpec",
    "TrainConfig",
    "compute_metrics",
    "generate_synthetic",
    "kfold_evaluate",
    "load_config",
    "load_dataset",
    "parse_config",
    "run_ablation",
    "run_sweep",
    "save_dataset",
    "train_fold",
]

__version__ = "0.1.0"
