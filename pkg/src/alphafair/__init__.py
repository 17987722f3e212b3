"""Alpha-sized worst-case fairness: train classifiers that protect any
unknown subgroup of at least an alpha share of the data by reweighting
samples according to how their gradients align with the worst-off ones."""

from .dataio import Dataset, GroupPartition, Schema, load_csv, partition_by, synthesize, two_group_fixture
from .evaluation import MetricsReport, evaluate
from .model import Layout, Model, init_model
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GroupPartition",
    "Layout",
    "MetricsReport",
    "Model",
    "Schema",
    "TrainConfig",
    "evaluate",
    "init_model",
    "load_csv",
    "partition_by",
    "synthesize",
    "train",
    "two_group_fixture",
]
