"""Numpy neural-network core: layers, losses, ADAM training, gradient checks."""

from .layers import (LayerSpec, batchnorm, conv2d, conv2d_transpose, dense, flatten, maxpool,
                     upsample)
from .losses import bce, cce, mse
from .network import Network, ShapeError, load_checkpoint, save_checkpoint
from .train import Adam, LossCurve, TrainConfig, Trainer, TrainingDiverged, accuracy, train

__all__ = [
    "LayerSpec", "batchnorm", "conv2d", "conv2d_transpose", "dense", "flatten", "maxpool", "upsample",
    "bce", "cce", "mse", "Network", "ShapeError", "load_checkpoint", "save_checkpoint",
    "Adam", "LossCurve", "TrainConfig", "Trainer", "TrainingDiverged", "accuracy", "train",
]
