from .layers import Conv2D, Conv3D, Dense, Dropout, Flatten, MaxPool, ReLU, Sigmoid
from .network import (
    Network,
    activation_maps,
    build_2cc3d,
    build_synth_cnn,
    load_model,
    save_model,
)
from .train import TrainConfig, evaluate, loss_and_gradients, train

__all__ = [
    "Conv2D",
    "Conv3D",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool",
    "ReLU",
    "Sigmoid",
    "Network",
    "activation_maps",
    "build_2cc3d",
    "build_synth_cnn",
    "load_model",
    "save_model",
    "TrainConfig",
    "evaluate",
    "loss_and_gradients",
    "train",
]
