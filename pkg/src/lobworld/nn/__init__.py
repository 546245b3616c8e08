"""Small double-precision network kernel: layers, losses, optimizers, gradient checks."""
from .gradcheck import grad_check, projection_loss, relative_error
from .layers import (LSTM, Activation, Conv1d, Dense, Downsample, Identity, Layer, Reshape,
                     Upsample, sigmoid, softmax)
from .losses import logsumexp, mdn_nll, mdn_split, mse, softmax_cross_entropy
from .network import Network, NetworkSpec, load_checkpoint, save_checkpoint
from .optim import SGD, Adam, clip_global_norm, make_optimizer
from .train import FitResult, TrainConfig, TrainingDiverged, evaluate_loss, fit

__all__ = [
    "LSTM", "Activation", "Adam", "Conv1d", "Dense", "Downsample", "FitResult", "Identity",
    "Layer", "Network", "NetworkSpec", "Reshape", "SGD", "TrainConfig", "TrainingDiverged",
    "Upsample", "clip_global_norm", "evaluate_loss", "fit", "grad_check", "load_checkpoint",
    "logsumexp", "make_optimizer", "mdn_nll", "mdn_split", "mse", "projection_loss",
    "relative_error", "save_checkpoint", "sigmoid", "softmax", "softmax_cross_entropy",
]
