"""Patch classifier: compact CNN, training loop, and checkpoints."""

from octpad.cnn.model import (
    CnnModel,
    Conv,
    Flatten,
    FullyConnected,
    LayerSpec,
    MaxPool,
    ReLU,
    Softmax,
    default_patch_cnn,
    forward,
    spoofness,
    spoofness_batch,
)
from octpad.cnn.train import (
    EpochStats,
    TrainConfig,
    augment_patch,
    bilinear_resize,
    lr_schedule,
    rmsprop_step,
    train,
)

__all__ = [
    "CnnModel",
    "Conv",
    "ReLU",
    "MaxPool",
    "Flatten",
    "FullyConnected",
    "Softmax",
    "LayerSpec",
    "default_patch_cnn",
    "forward",
    "spoofness",
    "spoofness_batch",
    "TrainConfig",
    "EpochStats",
    "train",
    "augment_patch",
    "bilinear_resize",
    "lr_schedule",
    "rmsprop_step",
]
