"""Datasets, training, metrics and experiment orchestration."""
from swfield.harness.config import GRID, STRATEGIES, TrainConfig
from swfield.harness.dataset import FieldDataset, ImbalanceError, distribution_table, undersample
from swfield.harness.estimator import HeadClassifier
from swfield.harness.experiments import compare_strategies, sweep
from swfield.harness.metrics import Metrics, confusion_matrix
from swfield.harness.training import DivergenceError, FieldModel, RunHistory, evaluate, train

__all__ = ["GRID", "STRATEGIES", "TrainConfig", "FieldDataset", "ImbalanceError", "distribution_table",
           "undersample", "HeadClassifier", "compare_strategies", "sweep", "Metrics", "confusion_matrix",
           "DivergenceError", "FieldModel", "RunHistory", "evaluate", "train"]
