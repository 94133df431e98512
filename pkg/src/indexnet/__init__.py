"""
indexnet - index-form deep learning on the CPU.

Feed-forward, convolutional, recurrent and LSTM networks whose forward and
backward passes are written as explicit index contractions over numpy
arrays, with batch normalization, seven gradient-descent optimizers and a
finite-difference gradient checker.
"""

__version__ = "0.1.0"
__author__ = "Jorge Barnaby"
__email__ = "jorge.barnaby@gmail.com"

from .core.errors import IndexNetError
from .core.model import Network

__all__ = ["IndexNetError", "Network"]
