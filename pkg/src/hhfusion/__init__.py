"""Adapter fusion with Householder-parameterised value layers, on a small numpy autodiff core."""
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
