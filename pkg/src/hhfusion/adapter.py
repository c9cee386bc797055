"""Residual adapters inserted after the last encoder layer."""
from __future__ import annotations

from typing import Dict, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Linear, Module
from .tensor import Tensor

ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu, "tanh": T.tanh}


class AdapterLayer(Module):
    """``y + up(act(down(y)))`` with biased projections and no internal norm.

    The up projection starts at zero, so a fresh adapter is the identity map.
    """

    def __init__(self, d: int, d_inner: int | None = None, rng=None, activation: str = "gelu"):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown adapter activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        d_inner = d if d_inner is None else d_inner
        self.down = Linear(d, d_inner, rng)
        self.up = Linear(d_inner, d, rng)
        self.up.weight.data[...] = 0.0
        self._activation = activation

    @property
    def dim(self) -> int:
        return self.down.weight.shape[0]

    @property
    def inner_dim(self) -> int:
        return self.down.weight.shape[1]

    def __call__(self, y_o) -> Tensor:
        return adapter_forward(self, y_o)


def adapter_forward(a: AdapterLayer, y_o) -> Tensor:
    y_o = T.as_tensor(y_o)
    if y_o.ndim == 0 or y_o.shape[-1] != a.dim:
        raise ShapeError(f"adapter for d={a.dim} applied to input of shape {y_o.shape}")
    act = ACTIVATIONS[a._activation]
    return y_o + a.up(act(a.down(y_o)))


def clone_adapter(src: AdapterLayer) -> AdapterLayer:
    twin = src.clone()
    twin.unfreeze()
    return twin


def adapter_param_count(d: int, d_inner: int | None = None) -> int:
    d_inner = d if d_inner is None else d_inner
    return d * d_inner + d_inner + d_inner * d + d


def stack_adapter_outputs(adapters: Sequence[AdapterLayer], y_o) -> Tensor:
    """``[Y_a_1, ..., Y_a_N]`` stacked on a new leading axis."""
    adapters = list(adapters)
    if not adapters:
        raise ConfigError("need at least one adapter to stack")
    dims = {a.dim for a in adapters}
    if len(dims) != 1:
        raise ConfigError(f"adapters disagree on model dimension: {sorted(dims)}")
    return T.stack([adapter_forward(a, y_o) for a in adapters], axis=0)


class AdapterAverage(Module):
    """Untrained combination: the mean of all adapter outputs."""

    def __init__(self, adapters: Dict[str, AdapterLayer]):
        self.adapter = dict(adapters)

    def __call__(self, y_o) -> Tensor:
        return T.mean(stack_adapter_outputs(self.adapter.values(), y_o), axis=0)
