"""MLSTM-FCN and MALSTM-FCN multivariate time-series classifiers on a float64 autodiff core."""

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    DomainError,
    MLSTMFCNError,
    NumericError,
    ParseError,
)
from .model import ModelConfig, ModelParams, Prediction, forward, predict_batch
from .optim import TrainPlan, fit, init_params
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "MLSTMFCNError",
    "NumericError",
    "ParseError",
    "ModelConfig",
    "ModelParams",
    "Prediction",
    "Tape",
    "Tensor",
    "TrainPlan",
    "backward",
    "fit",
    "forward",
    "init_params",
    "predict_batch",
]
