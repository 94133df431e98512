"""Core functionality: tensors, layers, networks, optimizers and checks."""

from .cnn import ConvNet
from .errors import ExitCode, IndexNetError
from .fnn import FeedForwardNet
from .lstm import LstmNet
from .model import Network
from .optim import OptimizerConfig, OptimizerKind, OptimizerState
from .rnn import RecurrentNet

__all__ = [
    "ConvNet",
    "ExitCode",
    "FeedForwardNet",
    "IndexNetError",
    "LstmNet",
    "Network",
    "OptimizerConfig",
    "OptimizerKind",
    "OptimizerState",
    "RecurrentNet",
]
