"""salhash: saliency-guided binary hashing for small-scale image retrieval."""

from .autodiff import Parameter, Tape, Tensor, backward, grad_check, sgd_step
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "sgd_step",
    "__version__",
]
