"""Deep feedforward and recurrent nets in numpy, with auto-encoder based smart indexing."""

__version__ = "0.1.0"

from ._accel import backend
from .network import DeepNet, NetworkSpec, forward, forward_batch, init_weights, predict
from .numerics import make_rng
from .training import Dataset, TrainConfig, TrainingDivergedError, backprop, sgd_train

__all__ = [
    "DeepNet",
    "NetworkSpec",
    "Dataset",
    "TrainConfig",
    "TrainingDivergedError",
    "backend",
    "backprop",
    "forward",
    "forward_batch",
    "init_weights",
    "make_rng",
    "predict",
    "sgd_train",
]
