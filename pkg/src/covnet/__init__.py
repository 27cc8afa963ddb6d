"""Covariance-assisted CSI feedback: channel simulation, a Transformer autoencoder
with a covariance branch, and the training / evaluation harness around it.

The network runs on a small reverse-mode autodiff engine over numpy
(:mod:`covnet.tensor`), so numpy is the only runtime dependency.
"""

__version__ = "0.1.0"

from .channel import ChannelConfig, generate_dataset, generate_sample
from .covariance import CovarianceSet, CovPre, estimate_covariance, inject_noise, preprocess, top_eigenvector
from .dataset import Dataset, read_dataset, write_dataset
from .errors import (
    ConfigError,
    ConvergenceError,
    CovNetError,
    DivergenceError,
    FormatError,
    GraphError,
    MetricError,
    ShapeError,
)
from .model import CovNet, ModelConfig, estimate_flops
from .tensor import Tensor, backward, no_grad
from .train import TrainConfig, evaluate, sweep_cr, sweep_noise, train

__all__ = [
    "ChannelConfig",
    "ConfigError",
    "ConvergenceError",
    "CovNet",
    "CovNetError",
    "CovPre",
    "CovarianceSet",
    "Dataset",
    "DivergenceError",
    "FormatError",
    "GraphError",
    "MetricError",
    "ModelConfig",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "backward",
    "estimate_covariance",
    "estimate_flops",
    "evaluate",
    "generate_dataset",
    "generate_sample",
    "inject_noise",
    "no_grad",
    "preprocess",
    "read_dataset",
    "sweep_cr",
    "sweep_noise",
    "top_eigenvector",
    "train",
    "write_dataset",
]
