"""Adapter fusion: attention over N adapter outputs, a value transform, and a residual.

For adapter outputs ``Y_a`` (``[N, ..., d]``) and the encoder output ``Y_O``::

    alpha_n = softmax_n( LN(Y_O Q) . LN(Y_a_n K) )
    Y_F     = sum_n alpha_n value(Y_a_n) + Y_O

With attention disabled the weights are a uniform ``1/N``; with the value
transform absent ``value`` is the identity. The value transform is linear, so
it is applied once to the weighted sum.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from . import tensor as T
from .adapter import AdapterLayer, stack_adapter_outputs
from .errors import ConfigError, ShapeError, UsageError
from .householder import HouseholderStack, init_stack, materialize, stack_apply, trainable_count
from .nn import LayerNorm, Module, Parameter
from .tensor import Tensor

VALUE_KINDS = ("dense", "householder", "absent")
OFF_DIAGONAL_INIT = 1e-6


@dataclass
class FusionConfig:
    num_adapters: int
    attention: bool = True
    d_att: int = 64
    value: str = "dense"
    num_couples: int = 64
    scaled: bool = True

    def __post_init__(self):
        if self.value not in VALUE_KINDS:
            raise ConfigError(f"unknown value kind {self.value!r}; expected one of {VALUE_KINDS}")
        if not self.attention and self.value == "absent":
            raise ConfigError("a fusion layer needs attention, a value transform, or both")
        if self.num_adapters < 1:
            raise ConfigError("num_adapters must be positive")
        if self.attention and self.d_att < 1:
            raise ConfigError("d_att must be positive")
        if self.value == "householder" and self.num_couples < 1:
            raise ConfigError("num_couples must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class DenseValue(Module):
    """Bias-free ``d x d`` matrix; rows of the input are multiplied as ``x @ W``."""

    def __init__(self, W: np.ndarray):
        self.W = Parameter(W)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def apply(self, x) -> Tensor:
        return T.matmul(x, self.W)

    def matrix(self) -> Tensor:
        return self.W


class HouseholderValue(Module):
    """``W_C = diag(s) P_C`` acting on column vectors (rows see ``x @ W_C.T``)."""

    def __init__(self, stack: HouseholderStack):
        self.householder = stack

    @property
    def dim(self) -> int:
        return self.householder.dim

    def apply(self, x) -> Tensor:
        return stack_apply(self.householder, x)

    def matrix(self) -> Tensor:
        return materialize(self.householder)


def init_dense_w(d: int) -> DenseValue:
    if d < 1:
        raise ConfigError("d must be positive")
    W = np.full((d, d), OFF_DIAGONAL_INIT)
    np.fill_diagonal(W, 1.0)
    return DenseValue(W)


def fixed_value(matrix: np.ndarray) -> DenseValue:
    """Frozen dense value transform, used to evaluate SVD ablations of a trained ``W``."""
    v = DenseValue(np.asarray(matrix, dtype=np.float64).copy())
    v.freeze()
    return v


class FusionLayer(Module):
    def __init__(self, cfg: FusionConfig, d: int, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.config = cfg
        self._d = d
        if cfg.attention:
            scale = 1.0 / np.sqrt(d)
            self.Q = Parameter(rng.normal(0.0, scale, size=(d, cfg.d_att)))
            self.K = Parameter(rng.normal(0.0, scale, size=(d, cfg.d_att)))
            self.ln_q = LayerNorm(cfg.d_att)
            self.ln_k = LayerNorm(cfg.d_att)
        else:
            self.Q = self.K = self.ln_q = self.ln_k = None
        if cfg.value == "dense":
            self.value = init_dense_w(d)
        elif cfg.value == "householder":
            self.value = HouseholderValue(init_stack(cfg.num_couples, d, rng, scaled=cfg.scaled))
        else:
            self.value = None

    @property
    def dim(self) -> int:
        return self._d

    def __call__(self, y_o, y_a) -> Tensor:
        return fusion_forward(self, y_o, y_a)


def _check_inputs(f: FusionLayer, y_o: Tensor, y_a: Tensor) -> None:
    n = f.config.num_adapters
    if y_a.ndim != y_o.ndim + 1 or y_a.shape[0] != n:
        raise ShapeError(f"expected {n} stacked adapter outputs of shape {y_o.shape}, got {y_a.shape}")
    if y_a.shape[1:] != y_o.shape:
        raise ShapeError(f"adapter outputs {y_a.shape[1:]} do not match encoder output {y_o.shape}")
    if y_o.shape[-1] != f.dim:
        raise ShapeError(f"fusion layer for d={f.dim} got inputs with last extent {y_o.shape[-1]}")


def _attention_weights(f: FusionLayer, y_o: Tensor, y_a: Tensor) -> Tensor:
    """Weights with the adapter axis leading: ``[N, ...]``."""
    q = f.ln_q(T.matmul(y_o, f.Q))
    k = f.ln_k(T.matmul(y_a, f.K))
    logits = T.tsum(k * q, axis=-1)
    return T.softmax(logits, axis=0)


def attention_scores(f: FusionLayer, y_o, y_a) -> Tensor:
    """``alpha`` with the adapter axis last (``[T, N]`` for unbatched inputs)."""
    if not f.config.attention:
        raise UsageError("attention is disabled in this fusion layer")
    y_o, y_a = T.as_tensor(y_o), T.as_tensor(y_a)
    _check_inputs(f, y_o, y_a)
    return T.moveaxis(_attention_weights(f, y_o, y_a), 0, -1)


def fusion_forward(f: FusionLayer, y_o, y_a) -> Tensor:
    y_o, y_a = T.as_tensor(y_o), T.as_tensor(y_a)
    _check_inputs(f, y_o, y_a)
    if f.config.attention:
        alpha = _attention_weights(f, y_o, y_a)
        mixed = T.tsum(T.reshape(alpha, alpha.shape + (1,)) * y_a, axis=0)
    else:
        mixed = T.mean(y_a, axis=0)
    if f.value is not None:
        mixed = f.value.apply(mixed)
    return mixed + y_o


def reg_loss(value) -> Tensor:
    """``||I - W||_F^2`` of the materialised value matrix."""
    if isinstance(value, FusionLayer):
        value = value.value
    if value is None:
        raise UsageError("the fusion layer has no value transform to regularise")
    W = value.matrix()
    return T.frobenius_sq(np.eye(value.dim) - W)


def count_fusion_parameters(cfg: FusionConfig, d: int) -> int:
    total = 0
    if cfg.attention:
        total += 2 * d * cfg.d_att + 2 * (2 * cfg.d_att)
    if cfg.value == "dense":
        total += d * d
    elif cfg.value == "householder":
        total += trainable_count(cfg.num_couples, d, cfg.scaled)
    return total


class FusedAdapters(Module):
    """Adapter-slot module: frozen adapters feeding a trainable fusion layer.

    Parameter names are ``adapter/<id>/...`` and ``fusion/...``.
    """

    def __init__(self, adapters: Dict[str, AdapterLayer], fusion: FusionLayer):
        if len(adapters) != fusion.config.num_adapters:
            raise ConfigError(
                f"fusion layer expects {fusion.config.num_adapters} adapters, got {len(adapters)}"
            )
        self.adapter = dict(adapters)
        self.fusion = fusion

    def adapter_outputs(self, y_o) -> Tensor:
        return stack_adapter_outputs(self.adapter.values(), y_o)

    def __call__(self, y_o) -> Tensor:
        return fusion_forward(self.fusion, y_o, self.adapter_outputs(y_o))
