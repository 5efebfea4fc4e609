"""Signed-graph neural ODEs for network dynamics and traffic forecasting."""
from . import errors, graphs, dynamics, ode, core, rnn, train, io, tensor
from .errors import SGODEError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["errors", "graphs", "dynamics", "ode", "core", "rnn", "train", "io", "tensor",
           "SGODEError", "BACKEND", "__version__"]
