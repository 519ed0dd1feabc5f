"""Uncertainty-quantified classification heads over fixed-dimension embeddings.

Three heads share one training and evaluation pipeline: a dense baseline, a
Bayesian flipout head whose predictions carry sample variance, and a
spectral-normalized Gaussian-process head whose variance grows with distance
from the training data.
"""

from .data import EmbeddingDataset, SplitIndices, load_dataset, split_dataset
from .evaluation import EvalReport, accuracy, f1_binary, flop_proxy, variance_decile_report
from .heads import (
    BNN,
    DNN,
    SNGP,
    BnnParams,
    DnnParams,
    HeadConfig,
    SngpParams,
    UncertainPrediction,
    predict_with_uncertainty,
)
from .model_io import load_model, save_model
from .numerics import RngStream
from .training import TrainConfig, TrainHistory, train

__all__ = [
    "BNN",
    "BnnParams",
    "DNN",
    "DnnParams",
    "EmbeddingDataset",
    "EvalReport",
    "HeadConfig",
    "RngStream",
    "SNGP",
    "SngpParams",
    "SplitIndices",
    "TrainConfig",
    "TrainHistory",
    "UncertainPrediction",
    "accuracy",
    "f1_binary",
    "flop_proxy",
    "load_dataset",
    "load_model",
    "predict_with_uncertainty",
    "save_model",
    "split_dataset",
    "train",
    "variance_decile_report",
]

__version__ = "0.1.0"
