"""TAIN: cross-attention video frame interpolation on a from-scratch autograd."""

__version__ = "0.1.0"

from .autograd import Tensor, backward, no_grad, use_dtype
from .data import AugmentConfig, Triplet, TripletDataset, augment, load_image, save_image
from .errors import (
    ConfigError,
    DataError,
    GraphError,
    ShapeError,
    TainError,
    TrainingError,
)
from .metrics import MetricsReport, bench_inference, evaluate, ie, psnr, ssim
from .model import ForwardTrace, ModelConfig, TainModel
from .training import (
    Adam,
    TrainConfig,
    interpolation_loss,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "Tensor", "backward", "no_grad", "use_dtype",
    "AugmentConfig", "Triplet", "TripletDataset", "augment", "load_image", "save_image",
    "TainError", "ShapeError", "GraphError", "ConfigError", "DataError", "TrainingError",
    "MetricsReport", "bench_inference", "evaluate", "ie", "psnr", "ssim",
    "ForwardTrace", "ModelConfig", "TainModel",
    "Adam", "TrainConfig", "interpolation_loss",
    "load_checkpoint", "model_from_checkpoint", "save_checkpoint", "train",
]
